"""End-to-end acceptance gate: one pass/fail line per criterion.

The quality criteria run on a fixed 10-scene synthetic suite (seeds 0-9,
500-2000 Gaussians, 20 orbit views at 128x128) with the oracle segmenter and
oracle features; numeric criteria run against independently coded references.
"""
import math
import struct
import time

import numpy as np
import pytest

from gsculpt.bench import (
    ORACLE_PATCH,
    SceneSpec,
    centroid_click,
    generate_scene,
    run_cell,
    scene_renders,
)
from gsculpt.epipolar import project_ray, register_ray
from gsculpt.errors import DegenerateEpipole
from gsculpt.perception import OracleFeatureExtractor, OracleSegmenter
from gsculpt.render import render
from gsculpt.scene import (
    Click,
    Selection,
    load_scene_ply,
    save_scene_ply,
    subsample_views,
)
from gsculpt.toolbox import EditRequest, TintEditor, color_gradient, colorize, \
    remove_selection, scale_selection, semantic_edit
from gsculpt.voting import (
    SegmentConfig,
    VoteTally,
    accumulate_view,
    normalized_votes,
    segment,
)

from conftest import (
    brute_force_render,
    brute_force_tally,
    frontal_scene_camera,
    make_camera,
    point_line_distance,
    random_pose_camera,
    random_rotation,
    random_scene,
)

# (n_objects, gaussians_per_object, clutter_count) per seed 0..9;
# totals span 500 .. 2000 Gaussians
SUITE = [(3, 100, 200), (4, 100, 250), (3, 150, 350), (4, 150, 400),
         (5, 150, 450), (5, 180, 500), (6, 160, 640), (6, 180, 720),
         (6, 200, 700), (6, 200, 800)]
RATES = (1.0, 0.5, 0.25, 0.1)


def report(capsys, criterion: str, ok: bool, detail: str):
    line = f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}"
    with capsys.disabled():
        print(line)
    assert ok, line


class Suite:
    """Scene suite with shared renders and a benchmark-cell cache."""

    def __init__(self):
        self.scenes = []
        self.gen_seconds = []
        for seed, (n_obj, per_obj, clutter) in enumerate(SUITE):
            t0 = time.perf_counter()
            gen = generate_scene(SceneSpec(
                seed=seed, n_objects=n_obj, gaussians_per_object=per_obj,
                clutter_count=clutter, orbit_views=20, image_size=128))
            renders = scene_renders(gen)
            self.gen_seconds.append(time.perf_counter() - t0)
            self.scenes.append((gen, renders))
        self._cells = {}

    def cell(self, i, **kw):
        key = (i, tuple(sorted(kw.items())))
        if key not in self._cells:
            gen, renders = self.scenes[i]
            self._cells[key] = run_cell(gen, renders, **kw)
        return self._cells[key]


@pytest.fixture(scope="module")
def suite():
    return Suite()


def test_criterion_1_oracle_segmentation_accuracy(suite, capsys):
    mious, maccs, walls = [], [], []
    for i in range(len(SUITE)):
        t0 = time.perf_counter()
        cell = suite.cell(i, rate=1.0)
        walls.append(time.perf_counter() - t0 + suite.gen_seconds[i])
        mious.append(cell.miou)
        maccs.append(cell.macc)
    miou, macc = float(np.mean(mious)), float(np.mean(maccs))
    ok = miou >= 0.95 and macc >= 0.98 and max(walls) <= 60.0
    report(capsys, "1 oracle segmentation accuracy", ok,
           f"mean mIoU {miou:.4f} (need >= 0.95), mean mAcc {macc:.4f} "
           f"(need >= 0.98), slowest scene {max(walls):.1f}s (limit 60s)")


def test_criterion_2_view_sampling_robustness(suite, capsys):
    means = {}
    for rate in RATES:
        means[rate] = float(np.mean(
            [suite.cell(i, rate=rate).miou for i in range(len(SUITE))]))
    worst_drop = max(means[1.0] - means[r] for r in RATES)

    # processing order must not matter when inspection is off: identical
    # vote fractions with shuffled vs stride-ordered views
    max_shuffle_diff = 0.0
    for i in range(len(SUITE)):
        gen, renders = suite.scenes[i]
        click = centroid_click(gen, subsample_views(gen.views, 0.5)[0].id)
        psis = []
        for shuffle in (False, True):
            views = subsample_views(gen.views, 0.5, shuffle=shuffle, seed=7)
            seg = OracleSegmenter(gen.scene, gen.views)
            for vid, lm in gen.label_maps.items():
                seg.prime(vid, lm)
            res = segment(gen.scene, views, [click], seg,
                          OracleFeatureExtractor(patch=ORACLE_PATCH),
                          config=SegmentConfig(iim_on=False), renders=renders)
            psis.append(normalized_votes(res.tally))
        max_shuffle_diff = max(max_shuffle_diff,
                               float(np.abs(psis[0] - psis[1]).max()))
    ok = worst_drop <= 0.02 and max_shuffle_diff <= 1e-9
    detail = ", ".join(f"rate {r}: {means[r]:.4f}" for r in RATES)
    report(capsys, "2 view sampling robustness", ok,
           f"{detail}; worst drop {worst_drop:.4f} (limit 0.02); "
           f"shuffle diff {max_shuffle_diff:.2e} (limit 1e-9)")


def test_criterion_3_epipolar_invariants(capsys):
    rng = np.random.default_rng(404)
    worst = 0.0
    pairs = 0
    while pairs < 1000:
        cam_a = random_pose_camera(rng, cam_id=0, width=128, height=128)
        cam_b = random_pose_camera(rng, cam_id=1, width=128, height=128)
        click = Click(view_id=0, x=rng.uniform(0, 127), y=rng.uniform(0, 127))
        ray = register_ray(click, cam_a)
        try:
            line = project_ray(ray, cam_b, scene_radius=5.0)
        except Exception:
            continue
        depths = rng.uniform(0.05, 40.0, 20)
        pts = ray.origin + depths[:, None] * ray.direction
        px, z = cam_b.project(pts)
        front = z > 0.01
        if not front.any():
            continue
        for p in px[front]:
            worst = max(worst, point_line_distance(p, line.p1, line.p2))
        pairs += 1

    degenerate_rejected = True
    for _ in range(20):
        cam_a = random_pose_camera(rng, cam_id=0)
        # zero baseline: same center, different orientation
        rot = random_rotation(rng)
        cam_b = make_camera(cam_id=1, width=64, height=64,
                            rotation=rot, translation=-rot @ cam_a.center)
        ray = register_ray(Click(view_id=0, x=30, y=30), cam_a)
        try:
            project_ray(ray, cam_b, scene_radius=5.0)
            degenerate_rejected = False
        except DegenerateEpipole:
            pass
        except Exception:
            pass  # other rejections (behind camera) also count as rejected
    ok = worst < 1e-6 and degenerate_rejected
    report(capsys, "3 epipolar invariants", ok,
           f"{pairs} pairs x 20 depths, worst point-to-line {worst:.2e} px "
           f"(limit 1e-6); zero-baseline rejected: {degenerate_rejected}")


def test_criterion_4_renderer_oracle_equivalence(capsys):
    rng = np.random.default_rng(99)
    worst_color = 0.0
    worst_conserve = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 51))
        scene, cam = frontal_scene_camera(rng, n=n)
        bg = rng.uniform(0, 1, 3)
        out = render(scene, cam, background=tuple(bg), record_weights=True)
        oracle_color, _, _ = brute_force_render(scene, cam, background=bg)
        worst_color = max(worst_color,
                          float(np.abs(out.color - oracle_color).max()))
        total = (out.weight_records.total_weight_image()
                 + out.weight_records.transmittance)
        worst_conserve = max(worst_conserve, float(np.abs(total - 1.0).max()))
    ok = worst_color < 1e-5 and worst_conserve < 1e-6
    report(capsys, "4 renderer oracle equivalence", ok,
           f"100 scenes: max color deviation {worst_color:.2e} (limit 1e-5), "
           f"max conservation error {worst_conserve:.2e} (limit 1e-6)")


def test_criterion_5_voting_oracle_equivalence(capsys):
    rng = np.random.default_rng(55)
    worst_tally = 0.0
    worst_perm = 0.0
    from gsculpt.scene import Mask
    for _ in range(5):
        scene = random_scene(rng, n=15, spread=1.0)
        cams = [random_pose_camera(rng, cam_id=k, width=32, height=32)
                for k in range(4)]
        recs, masks = [], []
        for c in cams:
            rec = render(scene, c, record_weights=True).weight_records
            bits = rng.integers(0, 2, (c.height, c.width)).astype(np.uint8)
            recs.append(rec)
            masks.append(Mask(view_id=c.id, bits=bits))
        tally = VoteTally.empty(len(scene))
        for m, r in zip(masks, recs):
            accumulate_view(tally, m, r)
        pos = np.zeros(len(scene))
        tot = np.zeros(len(scene))
        for m, r in zip(masks, recs):
            p, t = brute_force_tally(m.bits.astype(bool), r,
                                     n_gaussians=len(scene))
            pos += p
            tot += t
        worst_tally = max(worst_tally,
                          float(np.abs(tally.positive_mass - pos).max()),
                          float(np.abs(tally.total_mass - tot).max()))
        perm = rng.permutation(len(masks))
        tally2 = VoteTally.empty(len(scene))
        for j in perm:
            accumulate_view(tally2, masks[j], recs[j])
        worst_perm = max(worst_perm, float(np.abs(
            normalized_votes(tally) - normalized_votes(tally2)).max()))
    ok = worst_tally < 1e-9 and worst_perm < 1e-9
    report(capsys, "5 voting oracle equivalence", ok,
           f"tally vs double loop {worst_tally:.2e}, permutation "
           f"{worst_perm:.2e} (limits 1e-9)")


def test_criterion_6_inspection_efficacy(suite, capsys):
    diffs, gaps = [], []
    for i in range(len(SUITE)):
        clean = suite.cell(i, rate=1.0).miou
        on = suite.cell(i, corruption=0.3, iim=True).miou
        off = suite.cell(i, corruption=0.3, iim=False).miou
        diffs.append(on - off)
        gaps.append(abs(on - clean))
    ok = min(diffs) > 0 and max(gaps) <= 0.01
    report(capsys, "6 inspection efficacy under 30% corruption", ok,
           f"min (on - off) {min(diffs):.4f} (need > 0 on every scene); "
           f"max |on - clean| {max(gaps):.4f} (limit 0.01)")


def test_criterion_7_epipolar_ablation(suite, capsys):
    on = float(np.mean([suite.cell(i, feature_noise=0.1,
                                   epipolar=True).miou
                        for i in range(len(SUITE))]))
    off = float(np.mean([suite.cell(i, feature_noise=0.1,
                                    epipolar=False).miou
                         for i in range(len(SUITE))]))
    ok = off <= on
    report(capsys, "7 epipolar-constraint ablation (feature noise 0.1)", ok,
           f"suite mean mIoU: epipolar on {on:.4f} vs full-image "
           f"matching {off:.4f} (off must not exceed on)")


def test_criterion_8_toolbox_exactness(capsys):
    rng = np.random.default_rng(8)
    details = []
    ok = True

    # scale round trip
    scene = random_scene(rng, n=30)
    sel = Selection(scene_hash=scene.content_hash,
                    indices=rng.choice(30, 10, replace=False))
    eps = 1.7
    fwd = scale_selection(scene, sel, eps)
    back = scale_selection(fwd, Selection(fwd.content_hash, sel.indices),
                           1.0 / eps)
    rt = max(float(np.abs(back.positions - scene.positions).max()),
             float(np.abs(back.scales - scene.scales).max()))
    ok &= rt < 1e-9
    details.append(f"scale round trip {rt:.2e}")

    # balanced colorize mean
    target = np.array([0.3, 0.6, 0.9])
    col = colorize(scene, sel, target, mode="balanced")
    mean_err = float(np.abs(col.colors_dc[sel.indices].mean(axis=0)
                            - target).max())
    ok &= mean_err < 1e-9
    details.append(f"balanced mean {mean_err:.2e}")

    # removal leaves former selection-only pixels empty: two laterally
    # separated blobs, delete one, its pixels must carry zero blend weight
    fscene = random_scene(rng, n=20)
    fscene.positions[:, 2] = rng.uniform(3.0, 5.0, 20)
    fscene.positions[:, 1] *= 0.3
    fscene.positions[:8, 0] = -1.0 + 0.2 * fscene.positions[:8, 0]
    fscene.positions[8:, 0] = 1.0 + 0.2 * fscene.positions[8:, 0]
    cam = make_camera(width=32, height=32, f=40.0)
    fsel = Selection(fscene.content_hash, np.arange(8))
    before = render(fscene, cam, record_weights=True).weight_records
    sel_w = before.selected_weight_image(fsel.mask_over(fscene))
    surv_w = before.total_weight_image() - sel_w
    # transmittance guard: where T never hit the early-out, zero recorded
    # survivor weight means survivors genuinely don't cover the pixel
    only_sel = (sel_w > 0) & (surv_w == 0) & (before.transmittance > 1e-4)
    assert only_sel.any()
    after_scene, _ = remove_selection(fscene, fsel)
    after = render(after_scene, cam, record_weights=True).weight_records
    removal_err = float(after.total_weight_image()[only_sel].max())
    ok &= removal_err < 1e-6
    details.append(f"removal residual weight {removal_err:.2e}")

    # analytic gradient vs finite differences
    gscene, gcam = frontal_scene_camera(rng, n=8)
    gsel = Selection(gscene.content_hash, np.array([0, 3, 6]))

    class ConstTarget:
        def __init__(self, t):
            self.t = t

        def edit(self, image):
            return self.t

    tgt = np.full((gcam.height, gcam.width, 3), 4.0)
    grad, _ = color_gradient(gscene, gsel, gcam, ConstTarget(tgt))

    def loss_sum(colors):
        img = render(gscene.with_arrays(colors_dc=colors), gcam).color
        return np.abs(img - tgt).sum()

    h = 1e-6
    rel = 0.0
    for j in (0, 3, 6):
        for ch in range(3):
            up = gscene.colors_dc.copy()
            up[j, ch] += h
            dn = gscene.colors_dc.copy()
            dn[j, ch] -= h
            fd = (loss_sum(up) - loss_sum(dn)) / (2 * h)
            rel = max(rel, abs(grad[j, ch] - fd) / max(abs(fd), 1e-6))
    ok &= rel < 1e-4
    details.append(f"gradient FD rel err {rel:.2e}")

    # tint edit decreases the L1 loss per 50-step window
    escene, ecam = frontal_scene_camera(rng, n=12)
    esel = Selection(escene.content_hash, np.arange(12))
    from gsculpt.scene import ViewSet
    req = EditRequest(instruction="redden", steps=200, step_size=2e-3,
                      annealing=True, editor=TintEditor(amount=0.25))
    _, trace = semantic_edit(escene, esel, ViewSet([ecam]), req, seed=1)
    windows = [float(np.mean(trace[k:k + 50])) for k in range(0, 200, 50)]
    monotone = all(b <= a for a, b in zip(windows, windows[1:]))
    ok &= monotone
    details.append("window means " +
                   " >= ".join(f"{w:.4f}" for w in windows))
    report(capsys, "8 toolbox exactness", bool(ok), "; ".join(details))


def test_criterion_9_formats(tmp_path, capsys):
    rng = np.random.default_rng(9)
    scene = random_scene(rng, n=60, spread=4.0)
    scene.colors_rest = rng.uniform(-0.5, 0.5, (60, 45))
    path = tmp_path / "scene.ply"
    save_scene_ply(scene, path)
    back = load_scene_ply(path)
    rt = max(float(np.abs(scene.positions - back.positions).max()),
             float(np.abs(scene.scales - back.scales).max()),
             float(np.abs(scene.rotations - back.rotations).max()),
             float(np.abs(scene.opacities - back.opacities).max()),
             float(np.abs(scene.colors_dc - back.colors_dc).max()),
             float(np.abs(scene.colors_rest - back.colors_rest).max()))

    # independent decoder: parse the written file with struct only
    with open(path, "rb") as fh:
        header = []
        while True:
            line = fh.readline().decode().strip()
            header.append(line)
            if line == "end_header":
                break
        props = [l.split()[-1] for l in header if l.startswith("property")]
        count = int(next(l for l in header
                         if l.startswith("element vertex")).split()[-1])
        raw = fh.read()
    rows = [struct.unpack_from(f"<{len(props)}f", raw, i * 4 * len(props))
            for i in range(count)]
    col = {p: k for k, p in enumerate(props)}
    sh_c0 = 0.2820947917738781
    dec_err = 0.0
    for i, row in enumerate(rows):
        pos = [row[col[a]] for a in "xyz"]
        dec_err = max(dec_err, float(np.abs(
            np.array(pos) - back.positions[i]).max()))
        opac = 1.0 / (1.0 + math.exp(-row[col["opacity"]]))
        dec_err = max(dec_err, abs(opac - back.opacities[i]))
        for k in range(3):
            s = math.exp(row[col[f"scale_{k}"]])
            dec_err = max(dec_err, abs(s - back.scales[i, k]))
            c = 0.5 + sh_c0 * row[col[f"f_dc_{k}"]]
            dec_err = max(dec_err, abs(c - back.colors_dc[i, k]))
        q = np.array([row[col[f"rot_{k}"]] for k in range(4)])
        q = q / np.linalg.norm(q)
        dec_err = max(dec_err, float(np.abs(q - back.rotations[i]).max()))
    ok = rt < 1e-6 and dec_err < 1e-6
    report(capsys, "9 file formats", ok,
           f"PLY round trip {rt:.2e} (limit 1e-6); independent decoder "
           f"agreement {dec_err:.2e} (limit 1e-6)")
