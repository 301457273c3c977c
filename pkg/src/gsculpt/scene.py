"""Domain types for Gaussian scenes, cameras, clicks, masks, selections, and file I/O.

Scenes are stored struct-of-arrays and treated as immutable after construction;
every mutating operation elsewhere in the package builds a new scene.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from PIL import Image

from .errors import (
    BadIntrinsics,
    DuplicateViewId,
    EmptyResult,
    EmptyScene,
    IoFailure,
    MalformedHeader,
    MissingProperty,
    NonFiniteAttribute,
    NonOrthonormalRotation,
    SelectionMismatch,
)

SH_C0 = 0.2820947917738781
BACKGROUND_LABEL = -1

# standard splat vertex layout; f_rest_* is optional (degree-0 scenes omit it)
_PLY_BASE_PROPS = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
_PLY_REST_PROPS = [f"f_rest_{i}" for i in range(45)]
_PLY_TAIL_PROPS = ["opacity", "scale_0", "scale_1", "scale_2",
                   "rot_0", "rot_1", "rot_2", "rot_3"]


@dataclass(frozen=True)
class Gaussian:
    """Single-primitive view onto a scene row (activated attributes)."""
    position: np.ndarray
    scale: np.ndarray
    rotation: np.ndarray
    opacity: float
    color_dc: np.ndarray
    color_rest: np.ndarray | None = None


@dataclass
class GaussianScene:
    positions: np.ndarray          # (N, 3)
    scales: np.ndarray             # (N, 3), positive
    rotations: np.ndarray          # (N, 4), unit quaternions (w, x, y, z)
    opacities: np.ndarray          # (N,), in [0, 1]
    colors_dc: np.ndarray          # (N, 3)
    colors_rest: np.ndarray | None = None   # (N, 45) higher SH bands, channel-major
    labels: np.ndarray | None = None         # (N,), BACKGROUND_LABEL for clutter
    _hash: str | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        n = len(self.positions)
        self.scales = np.asarray(self.scales, dtype=np.float64).reshape(n, 3)
        self.rotations = np.asarray(self.rotations, dtype=np.float64).reshape(n, 4)
        self.opacities = np.asarray(self.opacities, dtype=np.float64).reshape(n)
        self.colors_dc = np.asarray(self.colors_dc, dtype=np.float64).reshape(n, 3)
        if self.colors_rest is not None:
            self.colors_rest = np.asarray(self.colors_rest, dtype=np.float64).reshape(n, -1)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64).reshape(n)

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def content_hash(self) -> str:
        if self._hash is None:
            h = hashlib.sha256()
            for arr in (self.positions, self.scales, self.rotations,
                        self.opacities, self.colors_dc):
                h.update(np.ascontiguousarray(arr).tobytes())
            if self.colors_rest is not None:
                h.update(np.ascontiguousarray(self.colors_rest).tobytes())
            self._hash = h.hexdigest()
        return self._hash

    def gaussian(self, i: int) -> Gaussian:
        return Gaussian(
            position=self.positions[i],
            scale=self.scales[i],
            rotation=self.rotations[i],
            opacity=float(self.opacities[i]),
            color_dc=self.colors_dc[i],
            color_rest=None if self.colors_rest is None else self.colors_rest[i],
        )

    def validate(self) -> None:
        if len(self) == 0:
            raise EmptyScene("scene has no Gaussians")
        for name, arr in (("position", self.positions), ("scale", self.scales),
                          ("rotation", self.rotations), ("opacity", self.opacities),
                          ("color", self.colors_dc)):
            bad = ~np.isfinite(arr).reshape(len(self), -1).all(axis=1)
            if bad.any():
                raise NonFiniteAttribute(int(np.argmax(bad)), name)
        if (self.opacities < 0).any() or (self.opacities > 1).any():
            raise ValueError("opacity outside [0, 1]")
        if (self.scales <= 0).any():
            raise ValueError("non-positive scale component")
        norms = np.linalg.norm(self.rotations, axis=1)
        if np.abs(norms - 1.0).max() > 1e-6:
            raise ValueError("non-unit rotation quaternion")
        if self.labels is not None and len(self.labels) != len(self):
            raise ValueError("labels do not cover every Gaussian")

    def with_arrays(self, **kwargs) -> "GaussianScene":
        """New scene sharing all arrays except the replaced ones."""
        base = dict(positions=self.positions, scales=self.scales,
                    rotations=self.rotations, opacities=self.opacities,
                    colors_dc=self.colors_dc, colors_rest=self.colors_rest,
                    labels=self.labels)
        base.update(kwargs)
        return GaussianScene(**base)

    def bounding_sphere(self) -> tuple[np.ndarray, float]:
        """Center and radius of a sphere containing all Gaussian centers."""
        center = self.positions.mean(axis=0)
        radius = float(np.linalg.norm(self.positions - center, axis=1).max())
        return center, max(radius, 1e-6)


@dataclass(frozen=True)
class Camera:
    id: int
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray      # (3, 3) world-to-camera, row-major
    translation: np.ndarray   # (3,)

    def __post_init__(self):
        object.__setattr__(self, "rotation",
                           np.asarray(self.rotation, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "translation",
                           np.asarray(self.translation, dtype=np.float64).reshape(3))

    def validate(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise BadIntrinsics(f"camera {self.id}: fx, fy must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise BadIntrinsics(f"camera {self.id}: principal point outside image")
        r = self.rotation
        if np.abs(r @ r.T - np.eye(3)).max() > 1e-6 or np.linalg.det(r) < 0:
            raise NonOrthonormalRotation(f"camera {self.id}")

    @property
    def intrinsics(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates, -R^T t."""
        return -self.rotation.T @ self.translation

    def world_to_camera(self, pts: np.ndarray) -> np.ndarray:
        return pts @ self.rotation.T + self.translation

    def project(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Project world points; returns (pixels (N,2), camera-space depth (N,))."""
        cam = self.world_to_camera(np.atleast_2d(pts))
        z = cam[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            px = np.stack([self.fx * cam[:, 0] / z + self.cx,
                           self.fy * cam[:, 1] / z + self.cy], axis=1)
        return px, z


class ViewSet:
    """Ordered camera list with id lookup."""

    def __init__(self, cameras: list[Camera]):
        self.cameras = list(cameras)
        self._by_id: dict[int, Camera] = {}
        for cam in self.cameras:
            if cam.id in self._by_id:
                raise DuplicateViewId(f"view id {cam.id} appears twice")
            self._by_id[cam.id] = cam

    def __len__(self):
        return len(self.cameras)

    def __iter__(self):
        return iter(self.cameras)

    def __getitem__(self, i) -> Camera:
        return self.cameras[i]

    def by_id(self, view_id: int) -> Camera:
        return self._by_id[view_id]

    @property
    def ids(self) -> list[int]:
        return [c.id for c in self.cameras]


@dataclass(frozen=True)
class Click:
    view_id: int
    x: float
    y: float
    polarity: str = "pos"          # "pos" | "neg"
    source: str = "user"           # "user" | "propagated"

    def __post_init__(self):
        if self.polarity not in ("pos", "neg"):
            raise ValueError(f"bad polarity {self.polarity!r}")


@dataclass
class Mask:
    view_id: int
    bits: np.ndarray   # (h, w) uint8 in {0, 1}

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.uint8)
        if self.bits.ndim != 2:
            raise ValueError("mask bits must be 2-D")

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]


@dataclass
class Selection:
    scene_hash: str
    indices: np.ndarray   # sorted unique int64

    def __post_init__(self):
        idx = np.unique(np.asarray(self.indices, dtype=np.int64))
        if len(idx) == 0:
            raise ValueError("selection must be non-empty")
        self.indices = idx

    def bind_check(self, scene: GaussianScene) -> None:
        if self.scene_hash != scene.content_hash:
            raise SelectionMismatch("selection is bound to a different scene version")
        if self.indices[-1] >= len(scene):
            raise SelectionMismatch("selection index exceeds scene size")

    def mask_over(self, scene: GaussianScene) -> np.ndarray:
        m = np.zeros(len(scene), dtype=bool)
        m[self.indices] = True
        return m


# ---------------------------------------------------------------------------
# PLY I/O
# ---------------------------------------------------------------------------

def _parse_ply_header(fh) -> tuple[int, list[str]]:
    line = fh.readline()
    if line.strip() != b"ply":
        raise MalformedHeader("not a PLY file")
    fmt = fh.readline().strip()
    if fmt != b"format binary_little_endian 1.0":
        raise MalformedHeader(f"unsupported format line: {fmt!r}")
    count = None
    props: list[str] = []
    while True:
        line = fh.readline()
        if not line:
            raise MalformedHeader("header ended before end_header")
        tokens = line.strip().decode("ascii", "replace").split()
        if not tokens:
            continue
        if tokens[0] == "end_header":
            break
        if tokens[0] == "comment":
            continue
        if tokens[0] == "element":
            if tokens[1] == "vertex":
                count = int(tokens[2])
            elif count is None:
                raise MalformedHeader(f"unexpected element before vertex: {tokens[1]}")
        elif tokens[0] == "property":
            if count is None:
                continue
            if tokens[1] != "float":
                raise MalformedHeader(f"non-float property {tokens[-1]}")
            props.append(tokens[2])
    if count is None:
        raise MalformedHeader("no vertex element")
    return count, props


def load_scene_ply(path) -> GaussianScene:
    """Load a splat PLY, applying the standard attribute activations."""
    with open(path, "rb") as fh:
        count, props = _parse_ply_header(fh)
        required = _PLY_BASE_PROPS + _PLY_TAIL_PROPS
        for name in required:
            if name not in props:
                raise MissingProperty(name)
        has_rest = all(p in props for p in _PLY_REST_PROPS)
        data = np.fromfile(fh, dtype=np.float32, count=count * len(props))
    if len(data) != count * len(props):
        raise MalformedHeader("vertex data truncated")
    table = data.reshape(count, len(props)).astype(np.float64)
    col = {name: i for i, name in enumerate(props)}

    def grab(names):
        return table[:, [col[n] for n in names]]

    positions = grab(["x", "y", "z"])
    f_dc = grab(["f_dc_0", "f_dc_1", "f_dc_2"])
    opacity_raw = table[:, col["opacity"]]
    scale_raw = grab(["scale_0", "scale_1", "scale_2"])
    rot_raw = grab(["rot_0", "rot_1", "rot_2", "rot_3"])

    for name, arr in (("position", positions), ("color", f_dc),
                      ("opacity", opacity_raw), ("scale", scale_raw),
                      ("rotation", rot_raw)):
        bad = ~np.isfinite(arr).reshape(count, -1).all(axis=1)
        if bad.any():
            raise NonFiniteAttribute(int(np.argmax(bad)), name)

    opacities = 1.0 / (1.0 + np.exp(-opacity_raw))
    scales = np.exp(scale_raw)
    norms = np.linalg.norm(rot_raw, axis=1, keepdims=True)
    if (norms == 0).any():
        raise NonFiniteAttribute(int(np.argmax(norms == 0)), "rotation")
    rotations = rot_raw / norms
    colors_dc = 0.5 + SH_C0 * f_dc
    colors_rest = grab(_PLY_REST_PROPS) / 1.0 if has_rest else None
    return GaussianScene(positions=positions, scales=scales, rotations=rotations,
                         opacities=opacities, colors_dc=colors_dc,
                         colors_rest=colors_rest)


def save_scene_ply(scene: GaussianScene, path) -> None:
    """Write a splat PLY with inverse activations so a reload round-trips."""
    if len(scene) == 0:
        raise EmptyScene("cannot save an empty scene")
    has_rest = scene.colors_rest is not None
    props = _PLY_BASE_PROPS + (_PLY_REST_PROPS if has_rest else []) + _PLY_TAIL_PROPS
    n = len(scene)
    table = np.zeros((n, len(props)), dtype=np.float64)
    col = {name: i for i, name in enumerate(props)}
    table[:, [col["x"], col["y"], col["z"]]] = scene.positions
    table[:, [col[f"f_dc_{i}"] for i in range(3)]] = (scene.colors_dc - 0.5) / SH_C0
    if has_rest:
        table[:, [col[p] for p in _PLY_REST_PROPS]] = scene.colors_rest
    op = np.clip(scene.opacities, 1e-9, 1 - 1e-9)
    table[:, col["opacity"]] = np.log(op / (1.0 - op))
    table[:, [col[f"scale_{i}"] for i in range(3)]] = np.log(scene.scales)
    table[:, [col[f"rot_{i}"] for i in range(4)]] = scene.rotations
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {p}" for p in props]
    header.append("end_header")
    try:
        with open(path, "wb") as fh:
            fh.write(("\n".join(header) + "\n").encode("ascii"))
            fh.write(table.astype("<f4").tobytes())
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


# ---------------------------------------------------------------------------
# JSON / PNG I/O
# ---------------------------------------------------------------------------

def load_cameras(path) -> ViewSet:
    with open(path) as fh:
        doc = json.load(fh)
    cams = []
    for entry in doc["cameras"]:
        cam = Camera(id=int(entry["id"]), width=int(entry["width"]),
                     height=int(entry["height"]), fx=float(entry["fx"]),
                     fy=float(entry["fy"]), cx=float(entry["cx"]),
                     cy=float(entry["cy"]), rotation=np.array(entry["R"]),
                     translation=np.array(entry["t"]))
        cam.validate()
        cams.append(cam)
    return ViewSet(cams)


def save_cameras(views: ViewSet, path) -> None:
    doc = {"cameras": [{
        "id": c.id, "width": c.width, "height": c.height,
        "fx": c.fx, "fy": c.fy, "cx": c.cx, "cy": c.cy,
        "R": c.rotation.reshape(-1).tolist(), "t": c.translation.tolist(),
    } for c in views]}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def load_clicks(path) -> list[Click]:
    with open(path) as fh:
        doc = json.load(fh)
    return [Click(view_id=int(c["view_id"]), x=float(c["x"]), y=float(c["y"]),
                  polarity=c.get("polarity", "pos"), source=c.get("source", "user"))
            for c in doc["clicks"]]


def save_clicks(clicks: list[Click], path) -> None:
    doc = {"clicks": [{"view_id": c.view_id, "x": c.x, "y": c.y,
                       "polarity": c.polarity, "source": c.source}
                      for c in clicks]}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def load_selection(path) -> Selection:
    with open(path) as fh:
        doc = json.load(fh)
    return Selection(scene_hash=doc["scene_hash"], indices=np.array(doc["indices"]))


def save_selection(sel: Selection, path) -> None:
    with open(path, "w") as fh:
        json.dump({"scene_hash": sel.scene_hash,
                   "indices": sel.indices.tolist()}, fh)


def load_mask_png(path, view_id: int = -1) -> Mask:
    img = np.asarray(Image.open(path).convert("L"))
    return Mask(view_id=view_id, bits=(img >= 128).astype(np.uint8))


def save_mask_png(mask: Mask, path) -> None:
    Image.fromarray((mask.bits * 255).astype(np.uint8), mode="L").save(path)


def save_image_png(color: np.ndarray, path) -> None:
    """Linear [0,1] float image to 8-bit PNG."""
    img = np.round(255.0 * np.clip(color, 0.0, 1.0)).astype(np.uint8)
    Image.fromarray(img).save(path)


def image_png_bytes(color: np.ndarray) -> bytes:
    import io
    img = np.round(255.0 * np.clip(color, 0.0, 1.0)).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(img).save(buf, format="PNG")
    return buf.getvalue()


# ---------------------------------------------------------------------------
# view subsampling
# ---------------------------------------------------------------------------

def subsample_views(views: ViewSet, rate: float, shuffle: bool = False,
                    seed: int = 0) -> ViewSet:
    """Uniform-stride view subsampling with optional seeded shuffling."""
    if not 0.0 < rate <= 1.0:
        raise ValueError(f"rate must be in (0, 1], got {rate}")
    k = len(views)
    if k == 0:
        raise EmptyResult("empty view set")
    n = math.ceil(rate * k)
    stride = k // n
    picked = [views[i * stride] for i in range(n)]
    if shuffle:
        order = np.random.default_rng(seed).permutation(n)
        picked = [picked[i] for i in order]
    return ViewSet(picked)
