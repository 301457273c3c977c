"""Manipulation operations over a Selection: colorize, scale, copy&paste,
combine, remove, and the iterative semantic-edit loop.

All operations are pure scene -> scene functions; unselected Gaussians come
out bit-identical. The edit loop updates only the DC color term, where the
compositor is linear and the L1 gradient is exact without autodiff.
"""
from __future__ import annotations

import base64
import io
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import (
    EditorUnavailable,
    NonPositiveEpsilon,
    WouldEmptyScene,
)
from .render import render
from .scene import (
    BACKGROUND_LABEL,
    Camera,
    GaussianScene,
    Selection,
    ViewSet,
    image_png_bytes,
)


def quat_multiply(q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
    """Hamilton product, (w, x, y, z) convention; q2 may be (N, 4)."""
    w1, x1, y1, z1 = q1
    q2 = np.atleast_2d(q2)
    w2, x2, y2, z2 = q2[:, 0], q2[:, 1], q2[:, 2], q2[:, 3]
    out = np.stack([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ], axis=1)
    return out


@dataclass(frozen=True)
class PlacementTransform:
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0, 0, 0]))
    uniform_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "translation",
                           np.asarray(self.translation, dtype=np.float64).reshape(3))
        q = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        n = np.linalg.norm(q)
        if n == 0 or self.uniform_scale <= 0:
            raise ValueError("placement needs a unit rotation and positive scale")
        object.__setattr__(self, "rotation", q / n)

    @classmethod
    def from_dict(cls, d: dict) -> "PlacementTransform":
        return cls(translation=np.array(d.get("translation", [0, 0, 0])),
                   rotation=np.array(d.get("rotation", [1, 0, 0, 0])),
                   uniform_scale=float(d.get("uniform_scale", 1.0)))


def colorize(scene: GaussianScene, selection: Selection, target,
             mode: str = "replace") -> GaussianScene:
    """Replace or re-balance the DC color of the selected Gaussians."""
    selection.bind_check(scene)
    target = np.asarray(target, dtype=np.float64).reshape(3)
    colors = scene.colors_dc.copy()
    idx = selection.indices
    if mode == "replace":
        colors[idx] = target
    elif mode == "balanced":
        colors[idx] += target - colors[idx].mean(axis=0)
    else:
        raise ValueError(f"unknown colorize mode {mode!r}")
    return scene.with_arrays(colors_dc=colors)


def scale_selection(scene: GaussianScene, selection: Selection,
                    epsilon: float) -> GaussianScene:
    """Scale the selected region about its geometric center."""
    if epsilon <= 0:
        raise NonPositiveEpsilon(f"epsilon must be positive, got {epsilon}")
    selection.bind_check(scene)
    idx = selection.indices
    positions = scene.positions.copy()
    scales = scene.scales.copy()
    center = positions[idx].mean(axis=0)
    positions[idx] = (positions[idx] - center) * epsilon + center
    scales[idx] *= epsilon
    return scene.with_arrays(positions=positions, scales=scales)


def _transform_subset(scene: GaussianScene, idx: np.ndarray,
                      placement: PlacementTransform):
    """Similarity-transform the indexed Gaussians about their centroid;
    returns the transformed attribute arrays."""
    from .render import quat_to_rotmat
    pos = scene.positions[idx]
    centroid = pos.mean(axis=0)
    rot = quat_to_rotmat(placement.rotation[None])[0]
    new_pos = ((pos - centroid) @ rot.T) * placement.uniform_scale \
        + centroid + placement.translation
    new_rots = quat_multiply(placement.rotation, scene.rotations[idx])
    new_scales = scene.scales[idx] * placement.uniform_scale
    return new_pos, new_scales, new_rots


def _appended(scene: GaussianScene, pos, scales, rots, opac, dc, rest, labels):
    new_rest = None
    if scene.colors_rest is not None or rest is not None:
        width = (scene.colors_rest.shape[1] if scene.colors_rest is not None
                 else rest.shape[1])
        own = (scene.colors_rest if scene.colors_rest is not None
               else np.zeros((len(scene), width)))
        add = rest if rest is not None else np.zeros((len(pos), width))
        new_rest = np.vstack([own, add])
    new_labels = None
    if scene.labels is not None:
        add_labels = labels if labels is not None \
            else np.full(len(pos), BACKGROUND_LABEL, dtype=np.int64)
        new_labels = np.concatenate([scene.labels, add_labels])
    return GaussianScene(
        positions=np.vstack([scene.positions, pos]),
        scales=np.vstack([scene.scales, scales]),
        rotations=np.vstack([scene.rotations, rots]),
        opacities=np.concatenate([scene.opacities, opac]),
        colors_dc=np.vstack([scene.colors_dc, dc]),
        colors_rest=new_rest, labels=new_labels)


def copy_paste(scene: GaussianScene, selection: Selection,
               placement: PlacementTransform) -> tuple[GaussianScene, Selection]:
    """Duplicate the selection, transform the copies, append them; returns
    the new scene and a selection of the copies."""
    selection.bind_check(scene)
    idx = selection.indices
    pos, scales, rots = _transform_subset(scene, idx, placement)
    rest = None if scene.colors_rest is None else scene.colors_rest[idx]
    labels = None if scene.labels is None else scene.labels[idx]
    out = _appended(scene, pos, scales, rots, scene.opacities[idx],
                    scene.colors_dc[idx], rest, labels)
    new_idx = np.arange(len(scene), len(scene) + len(idx))
    return out, Selection(scene_hash=out.content_hash, indices=new_idx)


def combine(target_scene: GaussianScene, source_scene: GaussianScene,
            source_selection: Selection,
            placement: PlacementTransform) -> GaussianScene:
    """Insert the transformed selected region of one scene into another."""
    source_selection.bind_check(source_scene)
    idx = source_selection.indices
    pos, scales, rots = _transform_subset(source_scene, idx, placement)
    rest = None if source_scene.colors_rest is None else source_scene.colors_rest[idx]
    labels = None if source_scene.labels is None else source_scene.labels[idx]
    if len(target_scene) == 0:
        return GaussianScene(positions=pos, scales=scales, rotations=rots,
                             opacities=source_scene.opacities[idx],
                             colors_dc=source_scene.colors_dc[idx],
                             colors_rest=rest, labels=labels)
    return _appended(target_scene, pos, scales, rots,
                     source_scene.opacities[idx],
                     source_scene.colors_dc[idx], rest, labels)


def remove_selection(scene: GaussianScene,
                     selection: Selection) -> tuple[GaussianScene, dict[int, int]]:
    """Delete the selected Gaussians; returns the scene and an old->new
    index remap for the survivors."""
    selection.bind_check(scene)
    if len(selection.indices) >= len(scene):
        raise WouldEmptyScene("removal would delete every Gaussian")
    keep = np.setdiff1d(np.arange(len(scene)), selection.indices)
    remap = {int(old): new for new, old in enumerate(keep)}
    return scene.with_arrays(
        positions=scene.positions[keep], scales=scene.scales[keep],
        rotations=scene.rotations[keep], opacities=scene.opacities[keep],
        colors_dc=scene.colors_dc[keep],
        colors_rest=None if scene.colors_rest is None else scene.colors_rest[keep],
        labels=None if scene.labels is None else scene.labels[keep]), remap


# ---------------------------------------------------------------------------
# 2D editors
# ---------------------------------------------------------------------------

class IdentityEditor:
    def edit(self, image: np.ndarray) -> np.ndarray:
        return image


class TintEditor:
    """Push one channel toward 1 by a fixed amount (default: red)."""

    def __init__(self, channel: int = 0, amount: float = 0.3):
        self.channel = channel
        self.amount = amount

    def edit(self, image: np.ndarray) -> np.ndarray:
        out = image.copy()
        out[..., self.channel] = np.clip(out[..., self.channel] + self.amount,
                                         0.0, 1.0)
        return out


class GammaEditor:
    def __init__(self, gamma: float = 0.6):
        self.gamma = gamma

    def edit(self, image: np.ndarray) -> np.ndarray:
        return np.clip(image, 0.0, 1.0) ** self.gamma


class RegionRecolorEditor:
    """Paint a fixed color wherever the given mask is set."""

    def __init__(self, mask_bits: np.ndarray, color):
        self.mask = mask_bits.astype(bool)
        self.color = np.asarray(color, dtype=np.float64)

    def edit(self, image: np.ndarray) -> np.ndarray:
        out = image.copy()
        out[self.mask] = self.color
        return out


class RemoteEditor:
    """HTTP client for an instruction-driven image editor."""

    def __init__(self, endpoint: str, instruction: str, timeout: float = 120.0):
        self.endpoint = endpoint.rstrip("/")
        self.instruction = instruction
        self.timeout = timeout

    def edit(self, image: np.ndarray) -> np.ndarray:
        import httpx
        body = {"image_png": base64.b64encode(image_png_bytes(image)).decode(),
                "instruction": self.instruction}
        try:
            resp = httpx.post(self.endpoint + "/edit", json=body,
                              timeout=self.timeout)
            resp.raise_for_status()
            png = base64.b64decode(resp.json()["image_png"])
        except Exception as exc:
            raise EditorUnavailable(str(exc)) from exc
        arr = np.asarray(Image.open(io.BytesIO(png)).convert("RGB"))
        return arr.astype(np.float64) / 255.0


def build_editor(spec: str, instruction: str = ""):
    if spec == "builtin:identity":
        return IdentityEditor()
    if spec == "builtin:tint-red":
        return TintEditor(channel=0)
    if spec == "builtin:gamma":
        return GammaEditor()
    if spec.startswith("remote:"):
        return RemoteEditor(spec[len("remote:"):], instruction)
    raise EditorUnavailable(f"unknown editor {spec!r}")


@dataclass
class EditRequest:
    instruction: str
    steps: int
    step_size: float
    annealing: bool = True
    editor: object = None

    def __post_init__(self):
        if self.steps < 1 or self.step_size <= 0:
            raise ValueError("steps must be >= 1 and step_size positive")


# ---------------------------------------------------------------------------
# semantic edit loop (analytic DC-color gradient)
# ---------------------------------------------------------------------------

def color_gradient(scene: GaussianScene, selection: Selection, cam: Camera,
                   editor, background=(0.0, 0.0, 0.0)):
    """Analytic gradient of the per-pixel L1 loss w.r.t. selected DC colors.

    The rendered color is linear in the DC terms (weights depend only on
    geometry and opacity), so d|I - I_e|/dc_j = sign(I - I_e) * w_{pixel,j}
    summed over pixels.
    """
    view = render(scene, cam, background=background, record_weights=True)
    edited = editor.edit(view.color)
    resid = view.color - edited
    sgn = np.sign(resid).reshape(-1, 3)
    pix, gidx, _, w = view.weight_records.arrays()
    grad = np.zeros((len(scene), 3))
    if len(pix):
        sel = selection.mask_over(scene)[gidx]
        np.add.at(grad, gidx[sel], w[sel, None] * sgn[pix[sel]])
    loss = float(np.abs(resid).mean())
    return grad, loss


def semantic_edit_step(scene: GaussianScene, selection: Selection, cam: Camera,
                       editor, step_size: float,
                       background=(0.0, 0.0, 0.0)) -> tuple[GaussianScene, float]:
    """One gradient step on the selected DC colors against the edited view."""
    selection.bind_check(scene)
    if editor is None:
        raise EditorUnavailable("no editor configured")
    grad, loss = color_gradient(scene, selection, cam, editor, background)
    colors = scene.colors_dc.copy()
    idx = selection.indices
    colors[idx] = np.clip(colors[idx] - step_size * grad[idx], 0.0, 1.0)
    return scene.with_arrays(colors_dc=colors), loss


def semantic_edit(scene: GaussianScene, selection: Selection, views: ViewSet,
                  request: EditRequest, seed: int = 0,
                  background=(0.0, 0.0, 0.0),
                  progress=None) -> tuple[GaussianScene, list[float]]:
    """Iterative multi-view edit: sample a view per step, apply one color
    step with (optionally) linearly annealed step size."""
    selection.bind_check(scene)
    if request.editor is None:
        raise EditorUnavailable("no editor configured")
    rng = np.random.default_rng(seed)
    current = scene
    sel = selection
    trace: list[float] = []
    for s in range(1, request.steps + 1):
        cam = views[int(rng.integers(len(views)))]
        eff = request.step_size * (1.0 - s / request.steps) \
            if request.annealing else request.step_size
        if eff <= 0.0:
            _, loss = color_gradient(current, sel, cam, request.editor,
                                     background)
        else:
            current, loss = semantic_edit_step(current, sel, cam,
                                               request.editor, eff, background)
            sel = Selection(scene_hash=current.content_hash,
                            indices=sel.indices)
        trace.append(loss)
        if progress is not None:
            progress(s, request.steps, loss)
    return current, trace
