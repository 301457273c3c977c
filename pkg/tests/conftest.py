"""Shared fixtures and independently coded oracles.

The oracles deliberately avoid the library's vectorized code paths: the
compositor is a per-pixel scalar loop, the quaternion conversion uses the
outer-product identity, and the projection Jacobian comes from central
finite differences.
"""
from __future__ import annotations

import math

import numpy as np
import pytest

from gsculpt.scene import Camera, GaussianScene, ViewSet


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------

def make_camera(cam_id=0, width=32, height=32, f=40.0, rotation=None,
                translation=None, cx=None, cy=None) -> Camera:
    cam = Camera(id=cam_id, width=width, height=height, fx=f, fy=f,
                 cx=width / 2.0 if cx is None else cx,
                 cy=height / 2.0 if cy is None else cy,
                 rotation=np.eye(3) if rotation is None else rotation,
                 translation=np.zeros(3) if translation is None else translation)
    cam.validate()
    return cam


def random_rotation(rng) -> np.ndarray:
    """Uniform-ish rotation matrix via QR with positive determinant."""
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_pose_camera(rng, cam_id=0, width=64, height=64):
    """Camera with a random pose that looks roughly at the origin."""
    rot = random_rotation(rng)
    center = rng.uniform(-4, 4, 3) + np.array([0, 0, -8.0])
    return make_camera(cam_id=cam_id, width=width, height=height,
                       f=rng.uniform(30, 80),
                       rotation=rot, translation=-rot @ center)


def random_scene(rng, n=10, spread=1.0, labeled=False) -> GaussianScene:
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return GaussianScene(
        positions=rng.uniform(-spread, spread, (n, 3)),
        scales=rng.uniform(0.05, 0.4, (n, 3)),
        rotations=q,
        opacities=rng.uniform(0.2, 0.95, n),
        colors_dc=rng.uniform(0.0, 1.0, (n, 3)),
        labels=rng.integers(0, 3, n) if labeled else None)


def frontal_scene_camera(rng, n=10):
    """Scene in front of an identity-pose camera at z in [2, 6]."""
    scene = random_scene(rng, n=n)
    scene.positions[:, 2] = rng.uniform(2.0, 6.0, n)
    scene.positions[:, :2] *= 0.5
    return scene, make_camera(width=32, height=32, f=40.0)


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------

def quat_matrix_oracle(q) -> np.ndarray:
    """Rotation matrix from a unit quaternion via the outer-product form
    R = (w^2 - v.v) I + 2 v v^T + 2 w [v]_x."""
    w, v = q[0], np.asarray(q[1:])
    cross = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0.0]])
    return (w * w - v @ v) * np.eye(3) + 2.0 * np.outer(v, v) + 2.0 * w * cross


def brute_force_render(scene: GaussianScene, cam: Camera,
                       background=(0.0, 0.0, 0.0)):
    """Unoptimized per-pixel compositor: for each pixel, walk every Gaussian
    in global depth order and apply the declared blending semantics (alpha
    clamp 0.99, skip below 1/255, stop below transmittance 1e-4, 3-sigma
    spatial support, 0.3 px^2 low-pass). Returns (color, weight_sums,
    transmittance)."""
    h, w = cam.height, cam.width
    n = len(scene)
    params = []
    for i in range(n):
        p_cam = cam.rotation @ scene.positions[i] + cam.translation
        z = p_cam[2]
        if z <= 0.01:
            continue
        mean = np.array([cam.fx * p_cam[0] / z + cam.cx,
                         cam.fy * p_cam[1] / z + cam.cy])
        rot = quat_matrix_oracle(scene.rotations[i])
        cov3 = rot @ np.diag(scene.scales[i] ** 2) @ rot.T
        jac = np.array([[cam.fx / z, 0.0, -cam.fx * p_cam[0] / z ** 2],
                        [0.0, cam.fy / z, -cam.fy * p_cam[1] / z ** 2]])
        jw = jac @ cam.rotation
        cov2 = jw @ cov3 @ jw.T + 0.3 * np.eye(2)
        inv = np.linalg.inv(cov2)
        mid = 0.5 * (cov2[0, 0] + cov2[1, 1])
        lam = mid + math.sqrt(max(mid * mid - np.linalg.det(cov2), 0.0))
        radius = 3.0 * math.sqrt(max(lam, 0.0))
        bbox = (max(math.floor(mean[0] - radius), 0),
                max(math.floor(mean[1] - radius), 0),
                min(math.ceil(mean[0] + radius) + 1, w),
                min(math.ceil(mean[1] + radius) + 1, h))
        if bbox[0] >= bbox[2] or bbox[1] >= bbox[3]:
            continue
        params.append((z, i, mean, inv, bbox))
    params.sort(key=lambda t: t[0])

    color = np.zeros((h, w, 3))
    wsum = np.zeros((h, w))
    trans = np.ones((h, w))
    bg = np.asarray(background, dtype=np.float64)
    for row in range(h):
        for col in range(w):
            t = 1.0
            c = np.zeros(3)
            total = 0.0
            for z, i, mean, inv, (x0, y0, x1, y1) in params:
                if not (x0 <= col < x1 and y0 <= row < y1):
                    continue
                d = np.array([col, row], dtype=np.float64) - mean
                alpha = min(0.99, scene.opacities[i]
                            * math.exp(-0.5 * (d @ inv @ d)))
                if alpha < 1.0 / 255.0:
                    continue
                if t <= 1e-4:
                    break
                weight = alpha * t
                c += weight * scene.colors_dc[i]
                total += weight
                t *= 1.0 - alpha
            color[row, col] = c + t * bg
            wsum[row, col] = total
            trans[row, col] = t
    return color, wsum, trans


def brute_force_tally(mask_bits: np.ndarray, records, mode="blend_weight",
                      opacities=None, n_gaussians=None):
    """Per-(pixel, contribution) double loop reference for the vote sums."""
    if n_gaussians is None:
        n_gaussians = int(records.arrays()[1].max()) + 1 if len(
            records.arrays()[0]) else 1
    positive = np.zeros(n_gaussians)
    total = np.zeros(n_gaussians)
    for row in range(records.height):
        for col in range(records.width):
            rec = records.record_for_pixel(row, col)
            for gi, alpha, weight in rec.contributions:
                power = weight if mode == "blend_weight" \
                    else weight * opacities[gi]
                total[gi] += power
                if mask_bits[row, col]:
                    positive[gi] += power
    return positive, total


def point_line_distance(point, a, b) -> float:
    """Distance from a 2-D point to the infinite line through a and b."""
    d = b - a
    n = np.linalg.norm(d)
    r = point - a
    return abs(d[0] * r[1] - d[1] * r[0]) / max(n, 1e-300)


def reference_line_walk(x0, y0, x1, y1):
    """Independent 8-connected line walker (axis-swapped error form)."""
    steep = abs(y1 - y0) > abs(x1 - x0)
    if steep:
        x0, y0, x1, y1 = y0, x0, y1, x1
    sx = 1 if x1 >= x0 else -1
    sy = 1 if y1 >= y0 else -1
    dx, dy = abs(x1 - x0), abs(y1 - y0)
    err = 0
    y = y0
    cells = []
    for x in range(x0, x1 + sx, sx):
        cells.append((y, x) if steep else (x, y))
        err += dy
        if 2 * err >= dx:
            y += sy
            err -= dx
    return cells


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
