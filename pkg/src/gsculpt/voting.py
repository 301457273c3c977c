"""Visibility-based Gaussian voting with the iterative inspection mechanism.

Per-view binary masks vote for Gaussians with power equal to their alpha
blending weight at each pixel; votes are normalized per Gaussian by its own
accumulated visibility mass, and Gaussians above the threshold form the
selection.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .epipolar import propagate_clicks
from .errors import DimensionMismatch, EmptySelection, GsculptError
from .render import WeightRecords, render, render_selection_mask
from .scene import Camera, Click, GaussianScene, Mask, Selection, ViewSet

VOTE_THRESHOLD_DEFAULT = 0.8
VISIBILITY_FLOOR = 1e-8

BLEND_WEIGHT = "blend_weight"
PAPER_LITERAL = "paper_literal"


@dataclass
class VoteTally:
    positive_mass: np.ndarray
    total_mass: np.ndarray
    accepted_views: list[int] = field(default_factory=list)

    @classmethod
    def empty(cls, n_gaussians: int) -> "VoteTally":
        return cls(positive_mass=np.zeros(n_gaussians),
                   total_mass=np.zeros(n_gaussians))

    def copy(self) -> "VoteTally":
        return VoteTally(self.positive_mass.copy(), self.total_mass.copy(),
                         list(self.accepted_views))


def vote_power(weight: np.ndarray, gauss_idx: np.ndarray,
               opacities: np.ndarray, mode: str) -> np.ndarray:
    """Per-contribution voting power. blend_weight uses the blending weight
    directly; paper_literal multiplies in the Gaussian opacity once more."""
    if mode == BLEND_WEIGHT:
        return weight
    if mode == PAPER_LITERAL:
        return weight * opacities[gauss_idx]
    raise ValueError(f"unknown vote power mode {mode!r}")


def accumulate_view(tally: VoteTally, mask: Mask, records: WeightRecords,
                    mode: str = BLEND_WEIGHT,
                    opacities: np.ndarray | None = None) -> VoteTally:
    """Add one view's votes to the tally (pure sums, order-independent)."""
    if (mask.height, mask.width) != (records.height, records.width):
        raise DimensionMismatch(
            f"mask {mask.height}x{mask.width} vs records "
            f"{records.height}x{records.width}")
    pix, gidx, _, w = records.arrays()
    if len(pix) == 0:
        return tally
    power = vote_power(w, gidx, opacities, mode)
    n = len(tally.total_mass)
    tally.total_mass += np.bincount(gidx, weights=power, minlength=n)
    inside = mask.bits.reshape(-1)[pix].astype(bool)
    tally.positive_mass += np.bincount(gidx[inside], weights=power[inside],
                                       minlength=n)
    tally.accepted_views.append(mask.view_id)
    return tally


def normalized_votes(tally: VoteTally) -> np.ndarray:
    """Per-Gaussian vote fraction in [0, 1]; never-visible Gaussians get 0."""
    visible = tally.total_mass >= VISIBILITY_FLOOR
    psi = np.zeros_like(tally.total_mass)
    psi[visible] = tally.positive_mass[visible] / tally.total_mass[visible]
    return psi


def select_gaussians(psi: np.ndarray, threshold: float,
                     scene_hash: str) -> Selection:
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    indices = np.nonzero(psi > threshold)[0]
    if len(indices) == 0:
        raise EmptySelection("no Gaussian cleared the vote threshold")
    return Selection(scene_hash=scene_hash, indices=indices)


def iim_inspect(predicted: Mask, scene: GaussianScene,
                running_selection: Selection | None, cam: Camera,
                records: WeightRecords | None = None) -> bool:
    """Accept the predicted mask when it overlaps the mask rendered from the
    running selection; the first view (no running selection) always passes."""
    if running_selection is None:
        return True
    rendered = render_selection_mask(scene, running_selection, cam,
                                     records=records)
    return bool((predicted.bits & rendered.bits).any())


@dataclass
class SegmentConfig:
    threshold: float = VOTE_THRESHOLD_DEFAULT
    mode: str = BLEND_WEIGHT
    iim_on: bool = True
    epipolar_on: bool = True
    background: tuple = (0.0, 0.0, 0.0)

    def to_dict(self) -> dict:
        return {"threshold": self.threshold, "mode": self.mode,
                "iim_on": self.iim_on, "epipolar_on": self.epipolar_on}


@dataclass
class SegmentResult:
    selection: Selection
    masks: dict[int, Mask]
    report: dict
    tally: VoteTally


def segment(scene: GaussianScene, views: ViewSet, clicks: list[Click],
            segmenter, feature_extractor,
            config: SegmentConfig | None = None,
            renders: dict | None = None) -> SegmentResult:
    """Full interactive-segmentation pipeline: propagate clicks, segment each
    view, inspect, vote, and threshold into a 3D selection.

    `renders` may carry precomputed RenderedView objects (with weight
    records) keyed by view id; missing views are rendered here.
    """
    config = config or SegmentConfig()
    if not clicks:
        raise ValueError("at least one click is required")
    scene.validate()
    t0 = time.perf_counter()
    timings: dict[str, float] = {}

    renders = dict(renders or {})
    for cam in views:
        if cam.id not in renders:
            renders[cam.id] = render(scene, cam, background=config.background,
                                     record_weights=True)
    timings["render_ms"] = (time.perf_counter() - t0) * 1e3

    t1 = time.perf_counter()
    features = {}
    feature_skips = []
    for cam in views:
        try:
            features[cam.id] = feature_extractor.extract(
                cam.id, renders[cam.id].color)
        except GsculptError as exc:
            feature_skips.append({"view_id": cam.id,
                                  "reason": type(exc).__name__})
    timings["features_ms"] = (time.perf_counter() - t1) * 1e3
    if feature_skips:
        failed = {s["view_id"] for s in feature_skips}
        views = ViewSet([cam for cam in views if cam.id not in failed])
        clicks = [c for c in clicks if c.view_id not in failed]
        if not clicks:
            raise EmptySelection(
                "feature extraction failed for every clicked view")

    if scene.labels is not None and hasattr(segmenter, "prime"):
        for cam in views:
            segmenter.prime(cam.id, renders[cam.id].weight_records
                            .label_map(scene.labels))

    t2 = time.perf_counter()
    _, radius = scene.bounding_sphere()
    all_clicks, prop_report = propagate_clicks(
        clicks, views, features, scene_radius=radius,
        epipolar_on=config.epipolar_on)
    timings["propagate_ms"] = (time.perf_counter() - t2) * 1e3

    by_view: dict[int, tuple[list, list]] = {cam.id: ([], []) for cam in views}
    for c in all_clicks:
        if c.view_id in by_view:
            by_view[c.view_id][0 if c.polarity == "pos" else 1].append(c)

    t3 = time.perf_counter()
    tally = VoteTally.empty(len(scene))
    running: Selection | None = None
    masks: dict[int, Mask] = {}
    accepted, rejected = [], []
    skipped = feature_skips + list(prop_report.skipped)
    opacities = scene.opacities
    for cam in views:
        pos, neg = by_view[cam.id]
        if not pos:
            skipped.append({"view_id": cam.id, "reason": "no_positive_click"})
            continue
        try:
            mask = segmenter.segment(cam.id, renders[cam.id].color, pos, neg)
        except GsculptError as exc:
            skipped.append({"view_id": cam.id, "reason": type(exc).__name__})
            continue
        masks[cam.id] = mask
        records = renders[cam.id].weight_records
        if config.iim_on and not iim_inspect(mask, scene, running, cam,
                                             records=records):
            rejected.append(cam.id)
            continue
        accumulate_view(tally, mask, records, mode=config.mode,
                        opacities=opacities)
        accepted.append(cam.id)
        if config.iim_on:
            psi = normalized_votes(tally)
            try:
                running = select_gaussians(psi, config.threshold,
                                           scene.content_hash)
            except EmptySelection:
                running = None
    timings["vote_ms"] = (time.perf_counter() - t3) * 1e3

    psi = normalized_votes(tally)
    selection = select_gaussians(psi, config.threshold, scene.content_hash)
    timings["total_ms"] = (time.perf_counter() - t0) * 1e3
    report = {"accepted_views": accepted, "rejected_views": rejected,
              "skipped_views": skipped, "config": config.to_dict(),
              "timings_ms": {k: round(v, 3) for k, v in timings.items()}}
    return SegmentResult(selection=selection, masks=masks, report=report,
                         tally=tally)
