"""Scalar CPU rasterizer: depth-sorted alpha compositing with per-pixel
blending-weight records, label maps, and selection-mask rendering.

Constants follow ecosystem conventions: alpha clamp 0.99, contribution skip
below 1/255, transmittance stop 1e-4, 0.3 px^2 low-pass on the screen
covariance diagonal, near plane z = 0.01.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MissingLabels
from .scene import BACKGROUND_LABEL, Camera, GaussianScene, Mask, Selection

NEAR_PLANE = 0.01
ALPHA_CLAMP = 0.99
ALPHA_SKIP = 1.0 / 255.0
TRANSMITTANCE_STOP = 1e-4
LOWPASS = 0.3
LABEL_WEIGHT_FLOOR = 1e-3

_SH_C1 = 0.4886025119029199
_SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
          -1.0925484305920792, 0.5462742152960396)
_SH_C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
          0.3731763325901154, -0.4570457994644658, 1.445305721320277,
          -0.5900435899266435)


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """(N, 4) unit quaternions (w, x, y, z) to (N, 3, 3) rotation matrices."""
    q = np.atleast_2d(q)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    m = np.empty((len(q), 3, 3))
    m[:, 0, 0] = 1 - 2 * (y * y + z * z)
    m[:, 0, 1] = 2 * (x * y - w * z)
    m[:, 0, 2] = 2 * (x * z + w * y)
    m[:, 1, 0] = 2 * (x * y + w * z)
    m[:, 1, 1] = 1 - 2 * (x * x + z * z)
    m[:, 1, 2] = 2 * (y * z - w * x)
    m[:, 2, 0] = 2 * (x * z - w * y)
    m[:, 2, 1] = 2 * (y * z + w * x)
    m[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def covariance3d(scene: GaussianScene) -> np.ndarray:
    """Per-Gaussian world covariance R S S^T R^T, shape (N, 3, 3)."""
    rot = quat_to_rotmat(scene.rotations)
    rs = rot * scene.scales[:, None, :]
    return rs @ rs.transpose(0, 2, 1)


def eval_colors(scene: GaussianScene, cam: Camera) -> np.ndarray:
    """View-dependent colors: DC term plus higher SH bands when present."""
    colors = scene.colors_dc.copy()
    rest = scene.colors_rest
    if rest is None or rest.shape[1] == 0:
        return colors
    coeffs = rest.reshape(len(scene), 3, -1)   # channel-major
    n_coeff = coeffs.shape[2]
    dirs = scene.positions - cam.center
    dirs = dirs / np.maximum(np.linalg.norm(dirs, axis=1, keepdims=True), 1e-12)
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    basis = [-_SH_C1 * y, _SH_C1 * z, -_SH_C1 * x]
    if n_coeff > 3:
        xx, yy, zz = x * x, y * y, z * z
        xy, yz, xz = x * y, y * z, x * z
        basis += [_SH_C2[0] * xy, _SH_C2[1] * yz,
                  _SH_C2[2] * (2 * zz - xx - yy),
                  _SH_C2[3] * xz, _SH_C2[4] * (xx - yy)]
    if n_coeff > 8:
        basis += [_SH_C3[0] * y * (3 * xx - yy), _SH_C3[1] * xy * z,
                  _SH_C3[2] * y * (4 * zz - xx - yy),
                  _SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy),
                  _SH_C3[4] * x * (4 * zz - xx - yy),
                  _SH_C3[5] * z * (xx - yy), _SH_C3[6] * x * (xx - 3 * yy)]
    b = np.stack(basis[:n_coeff], axis=1)      # (N, n_coeff)
    colors += np.einsum("nck,nk->nc", coeffs[:, :, :len(basis)], b[:, :n_coeff])
    return colors


@dataclass(frozen=True)
class ProjectedGaussian:
    gaussian_index: int
    mean2d: np.ndarray        # (2,) pixels
    cov2d: np.ndarray         # (2, 2) pixels^2, low-pass applied
    depth: float
    screen_bbox: tuple[int, int, int, int]   # (x0, y0, x1, y1), half-open


def _screen_bbox(mean2d, cov2d, width, height):
    mid = 0.5 * (cov2d[..., 0, 0] + cov2d[..., 1, 1])
    det = cov2d[..., 0, 0] * cov2d[..., 1, 1] - cov2d[..., 0, 1] ** 2
    lam = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    radius = 3.0 * np.sqrt(np.maximum(lam, 0.0))
    x0 = np.maximum(np.floor(mean2d[..., 0] - radius), 0).astype(np.int64)
    y0 = np.maximum(np.floor(mean2d[..., 1] - radius), 0).astype(np.int64)
    x1 = np.minimum(np.ceil(mean2d[..., 0] + radius) + 1, width).astype(np.int64)
    y1 = np.minimum(np.ceil(mean2d[..., 1] + radius) + 1, height).astype(np.int64)
    return x0, y0, x1, y1


def project_all(scene: GaussianScene, cam: Camera):
    """Project every Gaussian; returns (valid, mean2d, cov2d, depth, bbox arrays)."""
    cam_pts = cam.world_to_camera(scene.positions)
    z = cam_pts[:, 2]
    in_front = z > NEAR_PLANE
    zs = np.where(in_front, z, 1.0)
    mean2d = np.stack([cam.fx * cam_pts[:, 0] / zs + cam.cx,
                       cam.fy * cam_pts[:, 1] / zs + cam.cy], axis=1)
    n = len(scene)
    jac = np.zeros((n, 2, 3))
    jac[:, 0, 0] = cam.fx / zs
    jac[:, 0, 2] = -cam.fx * cam_pts[:, 0] / (zs * zs)
    jac[:, 1, 1] = cam.fy / zs
    jac[:, 1, 2] = -cam.fy * cam_pts[:, 1] / (zs * zs)
    jw = jac @ cam.rotation
    cov2d = jw @ covariance3d(scene) @ jw.transpose(0, 2, 1)
    cov2d[:, 0, 0] += LOWPASS
    cov2d[:, 1, 1] += LOWPASS
    x0, y0, x1, y1 = _screen_bbox(mean2d, cov2d, cam.width, cam.height)
    valid = in_front & (x0 < x1) & (y0 < y1)
    return valid, mean2d, cov2d, z, (x0, y0, x1, y1)


def project_gaussian(scene: GaussianScene, index: int,
                     cam: Camera) -> ProjectedGaussian | None:
    """Single-Gaussian projection; None means culled."""
    sub = scene.with_arrays(positions=scene.positions[index:index + 1],
                            scales=scene.scales[index:index + 1],
                            rotations=scene.rotations[index:index + 1],
                            opacities=scene.opacities[index:index + 1],
                            colors_dc=scene.colors_dc[index:index + 1],
                            colors_rest=None, labels=None)
    valid, mean2d, cov2d, z, (x0, y0, x1, y1) = project_all(sub, cam)
    if not valid[0]:
        return None
    return ProjectedGaussian(gaussian_index=index, mean2d=mean2d[0],
                             cov2d=cov2d[0], depth=float(z[0]),
                             screen_bbox=(int(x0[0]), int(y0[0]),
                                          int(x1[0]), int(y1[0])))


@dataclass(frozen=True)
class BlendRecord:
    pixel: tuple[int, int]    # (row, col)
    contributions: list       # depth-ordered (gaussian_index, alpha, weight)


class WeightRecords:
    """Flat per-view record of every (pixel, gaussian, alpha, weight) blend
    contribution, appended in front-to-back depth order."""

    def __init__(self, height: int, width: int):
        self.height = height
        self.width = width
        self._pix: list[np.ndarray] = []
        self._gauss: list[np.ndarray] = []
        self._alpha: list[np.ndarray] = []
        self._weight: list[np.ndarray] = []
        self.transmittance: np.ndarray | None = None
        self._frozen = None

    def append(self, pix_flat, gauss_idx, alpha, weight):
        self._pix.append(pix_flat)
        self._gauss.append(np.full(len(pix_flat), gauss_idx, dtype=np.int64))
        self._alpha.append(alpha)
        self._weight.append(weight)

    def arrays(self):
        """(pixel_flat, gaussian_index, alpha, weight) concatenated arrays."""
        if self._frozen is None:
            if self._pix:
                self._frozen = (np.concatenate(self._pix),
                                np.concatenate(self._gauss),
                                np.concatenate(self._alpha),
                                np.concatenate(self._weight))
            else:
                empty = np.array([], dtype=np.int64)
                self._frozen = (empty, empty.copy(),
                                np.array([]), np.array([]))
        return self._frozen

    def total_weight_image(self) -> np.ndarray:
        pix, _, _, w = self.arrays()
        img = np.bincount(pix, weights=w, minlength=self.height * self.width)
        return img.reshape(self.height, self.width)

    def selected_weight_image(self, selected: np.ndarray) -> np.ndarray:
        """selected: boolean per-Gaussian mask."""
        pix, gidx, _, w = self.arrays()
        img = np.bincount(pix, weights=w * selected[gidx],
                          minlength=self.height * self.width)
        return img.reshape(self.height, self.width)

    def per_gaussian_weight(self, n_gaussians: int) -> np.ndarray:
        _, gidx, _, w = self.arrays()
        return np.bincount(gidx, weights=w, minlength=n_gaussians)

    def record_for_pixel(self, row: int, col: int) -> BlendRecord:
        pix, gidx, alpha, w = self.arrays()
        sel = pix == row * self.width + col
        contribs = list(zip(gidx[sel].tolist(), alpha[sel].tolist(),
                            w[sel].tolist()))
        return BlendRecord(pixel=(row, col), contributions=contribs)

    def label_map(self, labels: np.ndarray) -> np.ndarray:
        """Per-pixel label of the Gaussian with the largest blend weight;
        ties go to the smaller Gaussian index."""
        pix, gidx, _, w = self.arrays()
        out = np.full(self.height * self.width, BACKGROUND_LABEL, dtype=np.int64)
        if len(pix):
            order = np.lexsort((gidx, -w, pix))
            first = np.ones(len(order), dtype=bool)
            sorted_pix = pix[order]
            first[1:] = sorted_pix[1:] != sorted_pix[:-1]
            winners = order[first]
            out[pix[winners]] = labels[gidx[winners]]
        total = self.total_weight_image().reshape(-1)
        out[total < LABEL_WEIGHT_FLOOR] = BACKGROUND_LABEL
        return out.reshape(self.height, self.width)


@dataclass
class RenderedView:
    color: np.ndarray                           # (h, w, 3) in [0, 1]
    weight_records: WeightRecords | None = None
    label_map: np.ndarray | None = None
    depth: np.ndarray | None = None


def render(scene: GaussianScene, cam: Camera,
           background=(0.0, 0.0, 0.0), record_weights: bool = False,
           with_depth: bool = False,
           transmittance_stop: float = TRANSMITTANCE_STOP) -> RenderedView:
    """Front-to-back alpha compositing of the scene into camera `cam`."""
    h, w = cam.height, cam.width
    background = np.asarray(background, dtype=np.float64)
    color = np.zeros((h * w, 3))
    transmittance = np.ones(h * w)
    records = WeightRecords(h, w) if record_weights else None
    depth_acc = np.zeros(h * w) if with_depth else None

    if len(scene) > 0:
        valid, mean2d, cov2d, z, (bx0, by0, bx1, by1) = project_all(scene, cam)
        colors = eval_colors(scene, cam)
        idxs = np.nonzero(valid)[0]
        order = idxs[np.argsort(z[idxs], kind="stable")]
        col_grid, row_grid = np.meshgrid(np.arange(w), np.arange(h))
        for gi in order:
            x0, y0, x1, y1 = bx0[gi], by0[gi], bx1[gi], by1[gi]
            cx = col_grid[y0:y1, x0:x1].reshape(-1)
            cy = row_grid[y0:y1, x0:x1].reshape(-1)
            dx = cx - mean2d[gi, 0]
            dy = cy - mean2d[gi, 1]
            a, b, c = cov2d[gi, 0, 0], cov2d[gi, 0, 1], cov2d[gi, 1, 1]
            det = a * c - b * b
            if det <= 0:
                continue
            power = -0.5 * (c * dx * dx - 2 * b * dx * dy + a * dy * dy) / det
            alpha = np.minimum(ALPHA_CLAMP,
                               scene.opacities[gi] * np.exp(power))
            pix = cy * w + cx
            t_here = transmittance[pix]
            live = (alpha >= ALPHA_SKIP) & (t_here > transmittance_stop)
            if not live.any():
                continue
            pix = pix[live]
            alpha = alpha[live]
            weight = alpha * transmittance[pix]
            color[pix] += weight[:, None] * colors[gi]
            if depth_acc is not None:
                depth_acc[pix] += weight * z[gi]
            transmittance[pix] *= 1.0 - alpha
            if records is not None:
                records.append(pix, gi, alpha, weight)

    color += transmittance[:, None] * background
    depth = None
    if with_depth:
        total = 1.0 - transmittance
        depth = np.where(total > 1e-8, depth_acc / np.maximum(total, 1e-12), 0.0)
        depth = depth.reshape(h, w)
    if records is not None:
        records.transmittance = transmittance.reshape(h, w)
    return RenderedView(color=color.reshape(h, w, 3),
                        weight_records=records, depth=depth)


def render_label_map(scene: GaussianScene, cam: Camera,
                     records: WeightRecords | None = None) -> np.ndarray:
    if scene.labels is None:
        raise MissingLabels("scene has no per-Gaussian labels")
    if records is None:
        records = render(scene, cam, record_weights=True).weight_records
    return records.label_map(scene.labels)


def render_selection_mask(scene: GaussianScene, selection: Selection,
                          cam: Camera, threshold: float = 0.5,
                          records: WeightRecords | None = None) -> Mask:
    """Mask of pixels where the selection holds at least `threshold` of the
    pixel's total foreground blend weight."""
    selection.bind_check(scene)
    if records is None:
        records = render(scene, cam, record_weights=True).weight_records
    total = records.total_weight_image()
    sel = records.selected_weight_image(selection.mask_over(scene))
    bits = (total >= LABEL_WEIGHT_FLOOR) & (sel >= threshold * total)
    return Mask(view_id=cam.id, bits=bits.astype(np.uint8))
