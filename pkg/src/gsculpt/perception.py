"""Perception roles: promptable 2D segmenter and dense feature extractor.

Both come in two kinds: deterministic oracles that exploit synthetic-scene
labels (for tests and benchmarks), and HTTP clients speaking a small wire
protocol to real model servers.
"""
from __future__ import annotations

import base64
import io
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import DimensionMismatch, NoPositiveClick, RemoteUnavailable
from .render import render_label_map
from .scene import (
    BACKGROUND_LABEL,
    Camera,
    Click,
    GaussianScene,
    Mask,
    ViewSet,
    image_png_bytes,
)
from .epipolar import FeatureMap

DEFAULT_PATCH = 16
DEFAULT_DOWNSAMPLE = 2


@dataclass(frozen=True)
class SegmenterHandle:
    kind: str = "oracle"          # "oracle" | "remote"
    endpoint: str | None = None


@dataclass(frozen=True)
class FeatureExtractorHandle:
    kind: str = "oracle"
    patch: int = DEFAULT_PATCH
    downsample: int = DEFAULT_DOWNSAMPLE
    endpoint: str | None = None
    noise_sigma: float = 0.0      # additive descriptor noise (robustness runs)
    noise_seed: int = 0


class OracleSegmenter:
    """Label-map segmenter for synthetic labeled scenes: returns the label
    region under the first positive click, minus any negatively clicked
    regions."""

    def __init__(self, scene: GaussianScene, views: ViewSet):
        self.scene = scene
        self.views = views
        self._label_maps: dict[int, np.ndarray] = {}

    def prime(self, view_id: int, label_map: np.ndarray) -> None:
        """Install a precomputed label map (avoids a duplicate render)."""
        self._label_maps[view_id] = label_map

    def label_map(self, view_id: int) -> np.ndarray:
        if view_id not in self._label_maps:
            cam = self.views.by_id(view_id)
            self._label_maps[view_id] = render_label_map(self.scene, cam)
        return self._label_maps[view_id]

    def segment(self, view_id: int, image: np.ndarray,
                positive: list[Click], negative: list[Click]) -> Mask:
        if not positive:
            raise NoPositiveClick(f"view {view_id}")
        lm = self.label_map(view_id)
        h, w = lm.shape
        bits = np.zeros((h, w), dtype=np.uint8)
        for c in positive:
            lab = lm[min(int(round(c.y)), h - 1), min(int(round(c.x)), w - 1)]
            if lab != BACKGROUND_LABEL:
                bits[lm == lab] = 1
        for c in negative:
            lab = lm[min(int(round(c.y)), h - 1), min(int(round(c.x)), w - 1)]
            if lab != BACKGROUND_LABEL:
                bits[lm == lab] = 0
        return Mask(view_id=view_id, bits=bits)


class RemoteSegmenter:
    """HTTP client for a point-prompt segmentation server."""

    def __init__(self, endpoint: str, timeout: float = 30.0):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout

    def segment(self, view_id: int, image: np.ndarray,
                positive: list[Click], negative: list[Click]) -> Mask:
        if not positive:
            raise NoPositiveClick(f"view {view_id}")
        import httpx
        points = ([{"x": c.x, "y": c.y, "label": 1} for c in positive]
                  + [{"x": c.x, "y": c.y, "label": 0} for c in negative])
        body = {"image_png": base64.b64encode(image_png_bytes(image)).decode(),
                "points": points}
        try:
            resp = httpx.post(self.endpoint + "/segment", json=body,
                              timeout=self.timeout)
            resp.raise_for_status()
            png = base64.b64decode(resp.json()["mask_png"])
        except Exception as exc:
            raise RemoteUnavailable(str(exc)) from exc
        arr = np.asarray(Image.open(io.BytesIO(png)).convert("L"))
        return Mask(view_id=view_id, bits=(arr >= 128).astype(np.uint8))


def _downsample2x(image: np.ndarray) -> np.ndarray:
    h, w = image.shape[:2]
    h2, w2 = h // 2 * 2, w // 2 * 2
    img = image[:h2, :w2]
    return 0.25 * (img[0::2, 0::2] + img[1::2, 0::2]
                   + img[0::2, 1::2] + img[1::2, 1::2])


class OracleFeatureExtractor:
    """Hand-crafted per-cell descriptors on the 2x-downsampled image:
    mean RGB, RGB standard deviation, and a 2-bin gradient-magnitude
    histogram (D = 8)."""

    GRAD_SPLIT = 0.1

    def __init__(self, patch: int = DEFAULT_PATCH,
                 downsample: int = DEFAULT_DOWNSAMPLE):
        self.patch = patch
        self.downsample = downsample

    @property
    def stride(self) -> int:
        return self.patch * self.downsample

    def extract(self, view_id: int, image: np.ndarray) -> FeatureMap:
        small = image
        for _ in range(int(np.log2(self.downsample))):
            small = _downsample2x(small)
        h, w = small.shape[:2]
        p = self.patch
        gh, gw = h // p, w // p
        if gh == 0 or gw == 0:
            raise DimensionMismatch("image smaller than one feature cell")
        gray = small.mean(axis=2)
        gy, gx = np.gradient(gray)
        gmag = np.abs(gx) + np.abs(gy)
        cells = small[:gh * p, :gw * p].reshape(gh, p, gw, p, 3)
        mags = gmag[:gh * p, :gw * p].reshape(gh, p, gw, p)
        mean = cells.mean(axis=(1, 3))
        std = cells.std(axis=(1, 3))
        low = (mags <= self.GRAD_SPLIT).mean(axis=(1, 3))
        high = (mags > self.GRAD_SPLIT).mean(axis=(1, 3))
        grid = np.concatenate([mean, std, low[..., None], high[..., None]],
                              axis=2)
        return FeatureMap(view_id=view_id, grid=grid, stride=self.stride)


class NoisyFeatureExtractor:
    """Wraps an extractor with seeded additive Gaussian descriptor noise."""

    def __init__(self, inner, sigma: float, seed: int = 0):
        self.inner = inner
        self.sigma = sigma
        self.seed = seed

    @property
    def stride(self):
        return self.inner.stride

    def extract(self, view_id: int, image: np.ndarray) -> FeatureMap:
        fm = self.inner.extract(view_id, image)
        rng = np.random.default_rng((self.seed, view_id))
        noisy = fm.grid + rng.normal(0.0, self.sigma, fm.grid.shape)
        return FeatureMap(view_id=fm.view_id, grid=noisy, stride=fm.stride)


class RemoteFeatureExtractor:
    """HTTP client for a dense feature-extraction server."""

    def __init__(self, endpoint: str, patch: int = DEFAULT_PATCH,
                 downsample: int = DEFAULT_DOWNSAMPLE, timeout: float = 30.0):
        self.endpoint = endpoint.rstrip("/")
        self.patch = patch
        self.downsample = downsample
        self.timeout = timeout

    @property
    def stride(self) -> int:
        return self.patch * self.downsample

    def extract(self, view_id: int, image: np.ndarray) -> FeatureMap:
        import httpx
        body = {"image_png": base64.b64encode(image_png_bytes(image)).decode(),
                "downsample": self.downsample}
        try:
            resp = httpx.post(self.endpoint + "/features", json=body,
                              timeout=self.timeout)
            resp.raise_for_status()
            doc = resp.json()
        except Exception as exc:
            raise RemoteUnavailable(str(exc)) from exc
        h, w, d = int(doc["h"]), int(doc["w"]), int(doc["d"])
        expect_h = image.shape[0] // self.stride
        expect_w = image.shape[1] // self.stride
        if (h, w) != (expect_h, expect_w):
            raise DimensionMismatch(
                f"remote grid {h}x{w} inconsistent with stride {self.stride}")
        data = np.asarray(doc["data"], dtype=np.float64)
        if data.size != h * w * d:
            raise DimensionMismatch("remote payload size mismatch")
        return FeatureMap(view_id=view_id, grid=data.reshape(h, w, d),
                          stride=self.stride)


def build_segmenter(handle: SegmenterHandle, scene: GaussianScene | None = None,
                    views: ViewSet | None = None):
    if handle.kind == "oracle":
        if scene is None or views is None:
            raise ValueError("oracle segmenter requires a labeled scene in session")
        return OracleSegmenter(scene, views)
    if handle.kind == "remote":
        return RemoteSegmenter(handle.endpoint)
    raise ValueError(f"unknown segmenter kind {handle.kind!r}")


def build_feature_extractor(handle: FeatureExtractorHandle):
    if handle.kind == "oracle":
        fx = OracleFeatureExtractor(patch=handle.patch,
                                    downsample=handle.downsample)
    elif handle.kind == "remote":
        fx = RemoteFeatureExtractor(handle.endpoint, patch=handle.patch,
                                    downsample=handle.downsample)
    else:
        raise ValueError(f"unknown feature extractor kind {handle.kind!r}")
    if handle.noise_sigma > 0:
        fx = NoisyFeatureExtractor(fx, handle.noise_sigma, handle.noise_seed)
    return fx
