"""Batch command-line front end: a thin shell over the library."""
from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import bench as bench_mod
from .errors import GsculptError
from .perception import (
    FeatureExtractorHandle,
    OracleFeatureExtractor,
    OracleSegmenter,
    RemoteFeatureExtractor,
    RemoteSegmenter,
    NoisyFeatureExtractor,
)
from .render import render as render_view
from .scene import (
    GaussianScene,
    Mask,
    load_cameras,
    load_clicks,
    load_mask_png,
    load_scene_ply,
    load_selection,
    save_cameras,
    save_clicks,
    save_image_png,
    save_mask_png,
    save_scene_ply,
    save_selection,
    subsample_views,
)
from .toolbox import (
    EditRequest,
    PlacementTransform,
    build_editor,
    colorize,
    combine,
    copy_paste,
    remove_selection,
    scale_selection,
    semantic_edit,
)
from .voting import SegmentConfig, segment


def _fail(exc: Exception, code: int = 1):
    json.dump({"error": type(exc).__name__, "detail": str(exc)}, sys.stderr)
    sys.stderr.write("\n")
    sys.exit(code)


def _load_labeled_scene(scene_path, labels_path):
    scene = load_scene_ply(scene_path)
    if labels_path is None:
        guess = Path(scene_path).with_name("labels.json")
        labels_path = guess if guess.exists() else None
    if labels_path is not None:
        with open(labels_path) as fh:
            scene.labels = np.asarray(json.load(fh)["labels"], dtype=np.int64)
    return scene


def _build_perception(segmenter_spec, features_spec, patch, scene, views):
    if segmenter_spec == "oracle":
        seg = OracleSegmenter(scene, views)
    elif segmenter_spec.startswith("remote:"):
        seg = RemoteSegmenter(segmenter_spec[len("remote:"):])
    else:
        raise click.UsageError(f"bad --segmenter {segmenter_spec!r}")
    if features_spec == "oracle":
        fx = OracleFeatureExtractor(patch=patch)
    elif features_spec.startswith("remote:"):
        fx = RemoteFeatureExtractor(features_spec[len("remote:"):], patch=patch)
    else:
        raise click.UsageError(f"bad --features {features_spec!r}")
    return seg, fx


@click.group()
def main():
    """Interactive 3D Gaussian segmentation and manipulation."""


@main.command("segment")
@click.option("--scene", "scene_path", required=True, type=click.Path(exists=True))
@click.option("--cameras", "cameras_path", required=True, type=click.Path(exists=True))
@click.option("--clicks", "clicks_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--threshold", default=0.8, show_default=True)
@click.option("--mode", default="blend_weight", show_default=True,
              type=click.Choice(["blend_weight", "paper_literal"]))
@click.option("--iim", default="on", show_default=True, type=click.Choice(["on", "off"]))
@click.option("--epipolar", default="on", show_default=True, type=click.Choice(["on", "off"]))
@click.option("--sample-rate", default=1.0, show_default=True)
@click.option("--shuffle", is_flag=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--labels", "labels_path", default=None, type=click.Path(exists=True))
@click.option("--segmenter", default="oracle", show_default=True,
              help="oracle | remote:<url>")
@click.option("--features", default="oracle", show_default=True,
              help="oracle | remote:<url>")
@click.option("--patch", default=2, show_default=True,
              help="feature patch size (stride = patch x 2)")
def segment_cmd(scene_path, cameras_path, clicks_path, out_dir, threshold,
                mode, iim, epipolar, sample_rate, shuffle, seed, labels_path,
                segmenter, features, patch):
    """Segment a 3D region from a clicks file; writes selection, masks, report."""
    try:
        scene = _load_labeled_scene(scene_path, labels_path)
        views = load_cameras(cameras_path)
        views = subsample_views(views, sample_rate, shuffle=shuffle, seed=seed)
        clicks = load_clicks(clicks_path)
        seg, fx = _build_perception(segmenter, features, patch, scene, views)
        config = SegmentConfig(threshold=threshold, mode=mode,
                               iim_on=iim == "on", epipolar_on=epipolar == "on")
        result = segment(scene, views, clicks, seg, fx, config=config)
        out = Path(out_dir)
        (out / "masks").mkdir(parents=True, exist_ok=True)
        save_selection(result.selection, out / "selection.json")
        for vid, mask in result.masks.items():
            save_mask_png(mask, out / "masks" / f"view_{vid:03d}.png")
        with open(out / "report.json", "w") as fh:
            json.dump(result.report, fh, indent=1)
        click.echo(f"selected {len(result.selection.indices)} gaussians "
                   f"({len(result.report['accepted_views'])} views accepted)")
    except GsculptError as exc:
        _fail(exc)


@main.command("eval")
@click.option("--pred", "pred_dir", required=True, type=click.Path(exists=True))
@click.option("--gt", "gt_dir", required=True, type=click.Path(exists=True))
def eval_cmd(pred_dir, gt_dir):
    """Score predicted mask PNGs against ground truth (matched by filename)."""
    try:
        pred, gt = {}, {}
        names = sorted(p.name for p in Path(pred_dir).glob("*.png"))
        for i, name in enumerate(names):
            pred[i] = load_mask_png(Path(pred_dir) / name, view_id=i)
            gt[i] = load_mask_png(Path(gt_dir) / name, view_id=i)
        miou, macc = bench_mod.miou_macc(pred, gt)
        click.echo(f"{miou:.6g} {macc:.6g}")
    except (GsculptError, FileNotFoundError) as exc:
        _fail(exc)


@main.command("manip")
@click.option("--scene", "scene_path", required=True, type=click.Path(exists=True))
@click.option("--selection", "selection_path", required=True, type=click.Path(exists=True))
@click.option("--op", "op_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--cameras", "cameras_path", default=None, type=click.Path(exists=True),
              help="required for the edit op")
@click.option("--seed", default=0, show_default=True)
def manip_cmd(scene_path, selection_path, op_path, out_path, cameras_path, seed):
    """Apply a toolbox operation descriptor to a selection."""
    try:
        scene = load_scene_ply(scene_path)
        selection = load_selection(selection_path)
        with open(op_path) as fh:
            op = json.load(fh)
        kind = op["op"]
        if kind == "colorize":
            scene = colorize(scene, selection, op["color"],
                             mode=op.get("mode", "replace"))
        elif kind == "scale":
            scene = scale_selection(scene, selection, float(op["epsilon"]))
        elif kind == "remove":
            scene, _ = remove_selection(scene, selection)
        elif kind == "copy_paste":
            placement = PlacementTransform.from_dict(op.get("placement", {}))
            scene, copies = copy_paste(scene, selection, placement)
            save_selection(copies, Path(out_path).with_suffix(".copies.json"))
        elif kind == "combine":
            source = load_scene_ply(op["source_scene"])
            src_sel = load_selection(op["source_selection"])
            placement = PlacementTransform.from_dict(op.get("placement", {}))
            scene = combine(scene, source, src_sel, placement)
        elif kind == "edit":
            if cameras_path is None:
                raise click.UsageError("edit needs --cameras")
            views = load_cameras(cameras_path)
            editor = build_editor(op.get("editor", "builtin:identity"),
                                  op.get("instruction", ""))
            request = EditRequest(instruction=op.get("instruction", ""),
                                  steps=int(op.get("steps", 200)),
                                  step_size=float(op.get("step_size", 0.05)),
                                  annealing=bool(op.get("annealing", True)),
                                  editor=editor)
            scene, trace = semantic_edit(scene, selection, views, request,
                                         seed=seed)
            click.echo(f"final loss {trace[-1]:.6g}")
        else:
            raise click.UsageError(f"unknown op {kind!r}")
        save_scene_ply(scene, out_path)
        click.echo(f"wrote {out_path}")
    except GsculptError as exc:
        _fail(exc)


@main.command("bench")
@click.option("--specs", "specs_path", default=None, type=click.Path(exists=True),
              help="JSON list of SceneSpec fields; default 3 seeded scenes")
@click.option("--grid", "grid_path", default=None, type=click.Path(exists=True),
              help="JSON config grid (rates, shuffles, iims, epipolars, modes, corruptions)")
@click.option("--csv", "csv_path", required=True, type=click.Path())
def bench_cmd(specs_path, grid_path, csv_path):
    """Run the benchmark grid and emit a CSV."""
    try:
        if specs_path:
            with open(specs_path) as fh:
                specs = [bench_mod.SceneSpec(**d) for d in json.load(fh)]
        else:
            specs = [bench_mod.SceneSpec(seed=s) for s in range(3)]
        grid = {}
        if grid_path:
            with open(grid_path) as fh:
                grid = json.load(fh)
        result = bench_mod.run_benchmark(
            specs,
            rates=tuple(grid.get("rates", [1.0])),
            shuffles=tuple(grid.get("shuffles", [False])),
            iims=tuple(grid.get("iims", [True])),
            epipolars=tuple(grid.get("epipolars", [True])),
            modes=tuple(grid.get("modes", ["blend_weight"])),
            corruptions=tuple(grid.get("corruptions", [0.0])),
            feature_noise=float(grid.get("feature_noise", 0.0)),
            seed=int(grid.get("seed", 0)))
        result.write_csv(csv_path)
        click.echo(f"{len(result.cells)} cells, mean mIoU {result.mean_miou:.4f} "
                   f"mAcc {result.mean_macc:.4f}")
    except GsculptError as exc:
        _fail(exc)


@main.command("render")
@click.option("--scene", "scene_path", required=True, type=click.Path(exists=True))
@click.option("--cameras", "cameras_path", required=True, type=click.Path(exists=True))
@click.option("--view", "view_id", required=True, type=int)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--background", default="0,0,0", show_default=True)
def render_cmd(scene_path, cameras_path, view_id, out_path, background):
    """Render one view of a scene to PNG."""
    try:
        scene = load_scene_ply(scene_path)
        views = load_cameras(cameras_path)
        bg = [float(v) for v in background.split(",")]
        rv = render_view(scene, views.by_id(view_id), background=bg)
        save_image_png(rv.color, out_path)
        click.echo(f"wrote {out_path}")
    except GsculptError as exc:
        _fail(exc)


@main.command("gen")
@click.option("--spec", "spec_path", default=None, type=click.Path(exists=True),
              help="JSON SceneSpec fields; defaults used when omitted")
@click.option("--out", "out_dir", required=True, type=click.Path())
def gen_cmd(spec_path, out_dir):
    """Generate a labeled synthetic scene bundle (scene, cameras, labels,
    ground-truth masks, and a demo click)."""
    try:
        fields = {}
        if spec_path:
            with open(spec_path) as fh:
                fields = json.load(fh)
        spec = bench_mod.SceneSpec(**fields)
        gen = bench_mod.generate_scene(spec)
        out = Path(out_dir)
        (out / "gt_masks").mkdir(parents=True, exist_ok=True)
        save_scene_ply(gen.scene, out / "scene.ply")
        save_cameras(gen.views, out / "cameras.json")
        with open(out / "labels.json", "w") as fh:
            json.dump({"labels": gen.scene.labels.tolist()}, fh)
        for cam in gen.views:
            save_mask_png(gen.gt_mask(cam.id),
                          out / "gt_masks" / f"view_{cam.id:03d}.png")
        save_clicks([bench_mod.centroid_click(gen)], out / "clicks.json")
        with open(out / "meta.json", "w") as fh:
            json.dump({"seed": spec.seed, "target_label": gen.target_label,
                       "n_gaussians": len(gen.scene)}, fh)
        click.echo(f"wrote {out_dir}: {len(gen.scene)} gaussians, "
                   f"{len(gen.views)} views, target object {gen.target_label}")
    except GsculptError as exc:
        _fail(exc)


if __name__ == "__main__":
    main()
