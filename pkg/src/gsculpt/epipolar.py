"""Epipolar-guided click propagation: ray registration, epipolar line
projection and clipping, grid line traversal, and feature-affinity matching.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateEpipole,
    EmptySegment,
    RayBehindCamera,
    SingularIntrinsics,
)
from .scene import Camera, Click, ViewSet


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray      # camera center, world
    direction: np.ndarray   # unit vector

    def point_at(self, depth: float) -> np.ndarray:
        return self.origin + depth * self.direction


@dataclass(frozen=True)
class EpipolarLine:
    view_id: int
    p1: np.ndarray
    p2: np.ndarray
    clipped_segment: tuple[np.ndarray, np.ndarray] | None


@dataclass
class FeatureMap:
    view_id: int
    grid: np.ndarray    # (H', W', D)
    stride: float       # pixels per feature cell

    @property
    def shape(self):
        return self.grid.shape


def register_ray(click: Click, cam: Camera) -> Ray:
    """Ray through the click: origin at the camera center, direction from the
    depth-0 and depth-1 samples of the back-projection."""
    if cam.fx == 0 or cam.fy == 0:
        raise SingularIntrinsics(f"camera {cam.id}")
    k_inv = np.linalg.inv(cam.intrinsics)
    rt = cam.rotation.T
    p_w1 = -rt @ cam.translation
    p_w2 = rt @ (k_inv @ np.array([click.x, click.y, 1.0]) - cam.translation)
    diff = p_w1 - p_w2
    norm = np.linalg.norm(diff)
    if norm < 1e-12:
        raise SingularIntrinsics("degenerate back-projection")
    # sign immaterial to the line; orient away from the camera so positive
    # ray depths move into the scene
    return Ray(origin=p_w1, direction=-diff / norm)


def project_ray(ray: Ray, target: Camera, scene_radius: float = 1.0,
                near: float = 0.01) -> EpipolarLine:
    """Project the ray into the target view and clip to the image rectangle.

    Sample depths along the ray are chosen inside the interval where the
    target-camera depth is positive (the depth along the ray is linear in the
    ray parameter, so the interval is computed in closed form).
    """
    # target depth of ray point at parameter d: z(d) = a + b*d
    a = float(target.rotation[2] @ ray.origin + target.translation[2])
    b = float(target.rotation[2] @ ray.direction)
    lo, hi = 0.0, np.inf
    if abs(b) < 1e-15:
        if a <= near:
            raise RayBehindCamera(f"view {target.id}")
    elif b > 0:
        lo = max(lo, (near - a) / b)
    else:
        hi = (near - a) / b
        if hi <= lo:
            raise RayBehindCamera(f"view {target.id}")
    if np.isinf(hi):
        d1 = lo + 0.1 * scene_radius
        d2 = lo + 10.0 * scene_radius
    else:
        span = hi - lo
        d1 = lo + 0.1 * span
        d2 = lo + 0.9 * span
    pts = np.stack([ray.point_at(d1), ray.point_at(d2)])
    px, z = target.project(pts)
    if (z <= near).any():
        raise RayBehindCamera(f"view {target.id}")
    if np.linalg.norm(px[0] - px[1]) < 1e-6:
        raise DegenerateEpipole(f"view {target.id}")
    seg = clip_segment_to_rect(px[0], px[1], target.width - 1, target.height - 1)
    return EpipolarLine(view_id=target.id, p1=px[0], p2=px[1],
                        clipped_segment=seg)


def clip_segment_to_rect(p1, p2, xmax, ymax):
    """Liang-Barsky clipping of an (extended) line to [0,xmax]x[0,ymax].

    The input points define an infinite line; the returned segment is the
    line's intersection with the rectangle, or None when it misses.
    """
    d = p2 - p1
    # extend the segment far beyond the rectangle so the clip covers the line
    scale = 4.0 * (xmax + ymax + 2) / max(np.linalg.norm(d), 1e-12)
    a = p1 - scale * d
    b = p1 + scale * d
    d = b - a
    t0, t1 = 0.0, 1.0
    for p, q in ((-d[0], a[0] - 0.0), (d[0], xmax - a[0]),
                 (-d[1], a[1] - 0.0), (d[1], ymax - a[1])):
        if abs(p) < 1e-15:
            if q < 0:
                return None
            continue
        r = q / p
        if p < 0:
            if r > t1:
                return None
            t0 = max(t0, r)
        else:
            if r < t0:
                return None
            t1 = min(t1, r)
    if t0 > t1:
        return None
    return (a + t0 * d, a + t1 * d)


def rasterize_line(line: EpipolarLine, features: FeatureMap) -> list[tuple[int, int]]:
    """Integer feature-grid cells along the clipped epipolar segment,
    Bresenham-style: 8-connected, each cell once, ordered p1 toward p2."""
    if line.clipped_segment is None:
        raise EmptySegment(f"view {line.view_id}")
    h, w = features.grid.shape[:2]
    (a, b) = line.clipped_segment
    x0 = int(np.clip(np.floor(a[0] / features.stride), 0, w - 1))
    y0 = int(np.clip(np.floor(a[1] / features.stride), 0, h - 1))
    x1 = int(np.clip(np.floor(b[0] / features.stride), 0, w - 1))
    y1 = int(np.clip(np.floor(b[1] / features.stride), 0, h - 1))
    return bresenham_cells(x0, y0, x1, y1)


def bresenham_cells(x0: int, y0: int, x1: int, y1: int) -> list[tuple[int, int]]:
    """Classic integer Bresenham walk, endpoints included."""
    cells = []
    dx = abs(x1 - x0)
    dy = abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx - dy
    x, y = x0, y0
    while True:
        cells.append((x, y))
        if x == x1 and y == y1:
            break
        e2 = 2 * err
        if e2 > -dy:
            err -= dy
            x += sx
        if e2 < dx:
            err += dx
            y += sy
    return cells


def match_click(source_feature: np.ndarray, samples: list[tuple[int, int]],
                features: FeatureMap) -> tuple[float, float]:
    """Affinity argmax along the sampled cells (raw dot product); returns
    pixel coordinates of the winning cell center."""
    if not samples:
        raise EmptySegment(f"view {features.view_id}")
    cols = np.array([s[0] for s in samples])
    rows = np.array([s[1] for s in samples])
    affinity = features.grid[rows, cols] @ source_feature
    best = int(np.argmax(affinity))   # first maximal index wins ties
    stride = features.stride
    return ((cols[best] + 0.5) * stride, (rows[best] + 0.5) * stride)


def match_click_full_image(source_feature: np.ndarray,
                           features: FeatureMap) -> tuple[float, float]:
    """Ablation path: affinity argmax over every cell of the feature grid."""
    h, w = features.grid.shape[:2]
    affinity = features.grid.reshape(h * w, -1) @ source_feature
    best = int(np.argmax(affinity))
    row, col = divmod(best, w)
    stride = features.stride
    return ((col + 0.5) * stride, (row + 0.5) * stride)


def source_feature_at(features: FeatureMap, x: float, y: float) -> np.ndarray:
    """Nearest-cell feature lookup for a pixel coordinate."""
    h, w = features.grid.shape[:2]
    col = int(np.clip(x // features.stride, 0, w - 1))
    row = int(np.clip(y // features.stride, 0, h - 1))
    return features.grid[row, col]


@dataclass
class PropagationReport:
    propagated: int = 0
    skipped: list[dict] = field(default_factory=list)

    def skip(self, view_id: int, click: Click, reason: str) -> None:
        self.skipped.append({"view_id": view_id, "reason": reason,
                             "source_view": click.view_id,
                             "x": click.x, "y": click.y})


def propagate_clicks(clicks: list[Click], views: ViewSet,
                     features: dict[int, FeatureMap],
                     scene_radius: float = 1.0,
                     epipolar_on: bool = True) -> tuple[list[Click], PropagationReport]:
    """Propagate every source click into every other view via
    register_ray -> project_ray -> rasterize_line -> match_click.

    With epipolar_on False the argmax runs over the whole feature grid
    (ablation mode). Per-view failures are recorded, never fatal.
    """
    report = PropagationReport()
    out = list(clicks)
    for click in clicks:
        src_cam = views.by_id(click.view_id)
        src_feat = source_feature_at(features[click.view_id], click.x, click.y)
        for cam in views:
            if cam.id == click.view_id:
                continue
            feat = features[cam.id]
            try:
                if epipolar_on:
                    ray = register_ray(click, src_cam)
                    line = project_ray(ray, cam, scene_radius=scene_radius)
                    samples = rasterize_line(line, feat)
                    x, y = match_click(src_feat, samples, feat)
                else:
                    x, y = match_click_full_image(src_feat, feat)
            except (DegenerateEpipole, RayBehindCamera, EmptySegment) as exc:
                report.skip(cam.id, click, type(exc).__name__)
                continue
            x = min(max(x, 0.0), cam.width - 1)
            y = min(max(y, 0.0), cam.height - 1)
            out.append(Click(view_id=cam.id, x=x, y=y,
                             polarity=click.polarity, source="propagated"))
            report.propagated += 1
    out.sort(key=lambda c: (c.view_id, c.source != "user", c.x, c.y))
    return out, report
