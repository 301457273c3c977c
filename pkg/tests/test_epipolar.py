"""Click propagation: rays, epipolar lines, clipping, traversal, matching."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gsculpt.epipolar import (
    EpipolarLine,
    FeatureMap,
    bresenham_cells,
    clip_segment_to_rect,
    match_click,
    match_click_full_image,
    project_ray,
    propagate_clicks,
    rasterize_line,
    register_ray,
    source_feature_at,
)
from gsculpt.errors import EmptySegment, RayBehindCamera
from gsculpt.scene import Click, ViewSet

from conftest import (
    make_camera,
    point_line_distance,
    random_pose_camera,
    reference_line_walk,
)


# ---------------------------------------------------------------------------
# ray registration
# ---------------------------------------------------------------------------

class TestRegisterRay:
    def test_origin_is_camera_center(self, rng):
        cam = random_pose_camera(rng)
        ray = register_ray(Click(view_id=0, x=10, y=20), cam)
        np.testing.assert_allclose(ray.origin, cam.center, atol=1e-9)

    def test_direction_is_unit(self, rng):
        cam = random_pose_camera(rng)
        ray = register_ray(Click(view_id=0, x=3.5, y=50.2), cam)
        assert np.linalg.norm(ray.direction) == pytest.approx(1.0, abs=1e-12)

    def test_ray_points_reproject_onto_click(self, rng):
        """Every depth sample along the ray projects back to the click pixel."""
        for _ in range(50):
            cam = random_pose_camera(rng, cam_id=0)
            click = Click(view_id=0, x=rng.uniform(0, cam.width - 1),
                          y=rng.uniform(0, cam.height - 1))
            ray = register_ray(click, cam)
            depths = rng.uniform(0.1, 50.0, 20)
            pts = ray.origin + depths[:, None] * ray.direction
            px, z = cam.project(pts)
            # keep samples in front of the camera (direction sign puts them there)
            assert (z > 0).all()
            err = np.abs(px - np.array([click.x, click.y])).max()
            assert err < 1e-6

    def test_positive_depths_are_in_front(self, rng):
        cam = random_pose_camera(rng)
        ray = register_ray(Click(view_id=0, x=32, y=32), cam)
        _, z = cam.project(ray.point_at(5.0)[None])
        assert z[0] > 0


# ---------------------------------------------------------------------------
# epipolar line projection
# ---------------------------------------------------------------------------

class TestProjectRay:
    def test_true_match_lies_on_the_line(self, rng):
        """Project a world point into two views; the epipolar line of the
        first view's click must pass through the second view's projection."""
        hits = 0
        for _ in range(600):
            if hits >= 30:
                break
            cam_a = random_pose_camera(rng, cam_id=0)
            cam_b = random_pose_camera(rng, cam_id=1)
            world = rng.uniform(-2, 2, 3)
            (pa, za) = cam_a.project(world[None])
            (pb, zb) = cam_b.project(world[None])
            if za[0] < 0.5 or zb[0] < 0.5:
                continue
            if not (0 <= pa[0][0] < cam_a.width and 0 <= pa[0][1] < cam_a.height):
                continue
            ray = register_ray(Click(view_id=0, x=pa[0][0], y=pa[0][1]), cam_a)
            try:
                line = project_ray(ray, cam_b, scene_radius=4.0)
            except RayBehindCamera:
                continue
            dist = point_line_distance(pb[0], line.p1, line.p2)
            assert dist < 1e-6
            hits += 1
        assert hits >= 30

    def test_ray_fully_behind_target_raises(self):
        # target at origin looking +z; ray marches in -z half-space
        target = make_camera(cam_id=1)
        ray_origin = np.array([0.0, 0.0, -5.0])
        from gsculpt.epipolar import Ray
        ray = Ray(origin=ray_origin, direction=np.array([0.0, 0.0, -1.0]))
        with pytest.raises(RayBehindCamera):
            project_ray(ray, target)

    def test_clip_none_when_line_misses_image(self, rng):
        # epipolar line far outside: translate target so the ray projects
        # way off-screen
        target = make_camera(cam_id=1, translation=np.array([500.0, 0.0, 0.0]))
        from gsculpt.epipolar import Ray
        ray = Ray(origin=np.array([0.0, 0.0, 0.0]),
                  direction=np.array([0.0, 0.0, 1.0]))
        line = project_ray(ray, target, scene_radius=1.0)
        assert line.clipped_segment is None


class TestClipSegment:
    def test_inside_segment_extends_to_borders(self):
        # the input points define an infinite line, so the clip spans the rect
        a, b = clip_segment_to_rect(np.array([2.0, 5.0]), np.array([8.0, 5.0]),
                                    31, 31)
        got = sorted([a[0], b[0]])
        np.testing.assert_allclose(got, [0.0, 31.0], atol=1e-9)
        assert a[1] == pytest.approx(5.0) and b[1] == pytest.approx(5.0)

    def test_diagonal_clip_endpoints_on_boundary(self):
        res = clip_segment_to_rect(np.array([-5.0, -5.0]),
                                   np.array([40.0, 40.0]), 31, 31)
        assert res is not None
        for p in res:
            assert (0 - 1e-9) <= p[0] <= 31 + 1e-9
            assert (0 - 1e-9) <= p[1] <= 31 + 1e-9
        np.testing.assert_allclose(res[0], [0.0, 0.0], atol=1e-9)
        np.testing.assert_allclose(res[1], [31.0, 31.0], atol=1e-9)

    def test_miss_returns_none(self):
        assert clip_segment_to_rect(np.array([-10.0, -1.0]),
                                    np.array([40.0, -1.0]), 31, 31) is None

    @settings(max_examples=80, deadline=None)
    @given(st.floats(-50, 80), st.floats(-50, 80),
           st.floats(-50, 80), st.floats(-50, 80))
    def test_clip_output_inside_rect_property(self, x0, y0, x1, y1):
        p1, p2 = np.array([x0, y0]), np.array([x1, y1])
        if np.linalg.norm(p2 - p1) < 1e-6:
            return
        res = clip_segment_to_rect(p1, p2, 31, 31)
        if res is None:
            return
        for p in res:
            assert -1e-6 <= p[0] <= 31 + 1e-6
            assert -1e-6 <= p[1] <= 31 + 1e-6
        # clipped endpoints stay on the original infinite line
        for p in res:
            assert point_line_distance(p, p1, p2) < 1e-6


# ---------------------------------------------------------------------------
# grid traversal
# ---------------------------------------------------------------------------

class TestBresenham:
    def test_seven_three_matches_reference_walker(self):
        assert set(bresenham_cells(0, 0, 7, 3)) == \
            set(reference_line_walk(0, 0, 7, 3))

    def test_single_cell(self):
        assert bresenham_cells(4, 4, 4, 4) == [(4, 4)]

    def test_axis_aligned(self):
        assert bresenham_cells(0, 2, 4, 2) == [(i, 2) for i in range(5)]

    @settings(max_examples=120, deadline=None)
    @given(st.integers(-20, 20), st.integers(-20, 20),
           st.integers(-20, 20), st.integers(-20, 20))
    def test_walk_properties(self, x0, y0, x1, y1):
        cells = bresenham_cells(x0, y0, x1, y1)
        # endpoints, length, uniqueness
        assert cells[0] == (x0, y0) and cells[-1] == (x1, y1)
        assert len(cells) == max(abs(x1 - x0), abs(y1 - y0)) + 1
        assert len(set(cells)) == len(cells)
        # 8-connected steps
        for (ax, ay), (bx, by) in zip(cells, cells[1:]):
            assert max(abs(bx - ax), abs(by - ay)) == 1
        # every cell within half a pixel of the ideal line
        if (x0, y0) != (x1, y1):
            a = np.array([x0, y0], float)
            b = np.array([x1, y1], float)
            for c in cells:
                assert point_line_distance(np.array(c, float), a, b) <= 0.5 + 1e-9

    @settings(max_examples=60, deadline=None)
    @given(st.integers(-15, 15), st.integers(-15, 15),
           st.integers(-15, 15), st.integers(-15, 15))
    def test_matches_reference_when_no_tie(self, x0, y0, x1, y1):
        # the two walkers may legally differ at exact half-step ties, which
        # only arise when the major-axis delta is even
        if max(abs(x1 - x0), abs(y1 - y0)) % 2 == 0:
            return
        assert set(bresenham_cells(x0, y0, x1, y1)) == \
            set(reference_line_walk(x0, y0, x1, y1))


class TestRasterizeLine:
    def test_empty_segment_raises(self):
        line = EpipolarLine(view_id=2, p1=np.zeros(2), p2=np.ones(2),
                            clipped_segment=None)
        feat = FeatureMap(view_id=2, grid=np.zeros((8, 8, 4)), stride=4.0)
        with pytest.raises(EmptySegment):
            rasterize_line(line, feat)

    def test_pixel_endpoints_map_to_grid_cells(self):
        feat = FeatureMap(view_id=0, grid=np.zeros((8, 8, 4)), stride=4.0)
        seg = (np.array([1.0, 1.0]), np.array([30.0, 30.0]))
        line = EpipolarLine(view_id=0, p1=seg[0], p2=seg[1],
                            clipped_segment=seg)
        cells = rasterize_line(line, feat)
        assert cells[0] == (0, 0) and cells[-1] == (7, 7)


# ---------------------------------------------------------------------------
# affinity matching
# ---------------------------------------------------------------------------

class TestMatchClick:
    def _grid(self):
        grid = np.zeros((4, 4, 3))
        return FeatureMap(view_id=0, grid=grid, stride=8.0)

    def test_argmax_cell_center_returned(self):
        feat = self._grid()
        feat.grid[2, 1] = [1.0, 0.0, 0.0]
        samples = [(0, 0), (1, 2), (3, 3)]   # (col, row)
        x, y = match_click(np.array([1.0, 0.0, 0.0]), samples, feat)
        assert (x, y) == ((1 + 0.5) * 8.0, (2 + 0.5) * 8.0)

    def test_tie_goes_to_first_sample(self):
        feat = self._grid()
        feat.grid[0, 0] = [0.5, 0, 0]
        feat.grid[3, 3] = [0.5, 0, 0]
        x, y = match_click(np.array([1.0, 0, 0]),
                           [(0, 0), (3, 3)], feat)
        assert (x, y) == (0.5 * 8.0, 0.5 * 8.0)

    def test_raw_dot_product_not_cosine(self):
        # a longer vector with worse angle still wins under raw dot product
        feat = self._grid()
        feat.grid[0, 0] = [1.0, 0.0, 0.0]        # aligned, norm 1
        feat.grid[1, 1] = [3.0, 3.0, 0.0]        # 45 degrees, norm ~4.24
        x, y = match_click(np.array([1.0, 0, 0]),
                           [(0, 0), (1, 1)], feat)
        assert (x, y) == (1.5 * 8.0, 1.5 * 8.0)

    def test_empty_samples_raise(self):
        with pytest.raises(EmptySegment):
            match_click(np.zeros(3), [], self._grid())

    def test_full_image_argmax(self):
        feat = self._grid()
        feat.grid[3, 2] = [0, 1.0, 0]
        x, y = match_click_full_image(np.array([0, 1.0, 0]), feat)
        assert (x, y) == (2.5 * 8.0, 3.5 * 8.0)

    def test_source_feature_nearest_cell(self):
        feat = self._grid()
        feat.grid[1, 2] = [7.0, 0, 0]
        np.testing.assert_array_equal(
            source_feature_at(feat, x=2 * 8.0 + 3.0, y=1 * 8.0 + 7.9),
            [7.0, 0, 0])


# ---------------------------------------------------------------------------
# end-to-end propagation on planted one-hot features
# ---------------------------------------------------------------------------

class TestPropagateClicks:
    def _stereo_rig(self):
        """Two converging cameras plus one target world point."""
        import math
        cams = []
        for i, ang in enumerate((-0.3, 0.3)):
            rot = np.array([[math.cos(ang), 0, math.sin(ang)],
                            [0, 1, 0],
                            [-math.sin(ang), 0, math.cos(ang)]])
            center = np.array([math.sin(ang) * 6.0, 0.0,
                               -math.cos(ang) * 6.0])
            cams.append(make_camera(cam_id=i, width=64, height=64, f=60.0,
                                    rotation=rot, translation=-rot @ center))
        return ViewSet(cams)

    def test_planted_feature_recovered_along_epipolar_line(self, rng):
        views = self._stereo_rig()
        world = np.array([0.2, -0.1, 0.1])
        stride = 4.0
        feats = {}
        px = {}
        for cam in views:
            p, z = cam.project(world[None])
            assert z[0] > 0
            assert 0 <= p[0][0] < cam.width and 0 <= p[0][1] < cam.height
            px[cam.id] = p[0]
            grid = rng.normal(0, 0.05, (16, 16, 8))
            cell = (int(p[0][1] // stride), int(p[0][0] // stride))
            grid[cell] = np.zeros(8)
            grid[cell][cam.id % 8] = 0.0
            grid[cell] = [5.0] * 8     # strong shared feature at the match
            feats[cam.id] = FeatureMap(view_id=cam.id, grid=grid, stride=stride)
        click = Click(view_id=0, x=px[0][0], y=px[0][1], polarity="pos")
        out, report = propagate_clicks([click], views, feats, scene_radius=2.0)
        assert report.propagated == 1
        prop = [c for c in out if c.source == "propagated"]
        assert len(prop) == 1 and prop[0].view_id == 1
        # landed in the correct feature cell (cell-center accuracy)
        assert abs(prop[0].x - px[1][0]) <= stride
        assert abs(prop[0].y - px[1][1]) <= stride
        assert prop[0].polarity == "pos"

    def test_failures_skip_views_never_raise(self, rng):
        # second camera looks away from the scene: its epipolar projection
        # fails with RayBehindCamera and must be recorded as a skip
        flipped = np.diag([1.0, -1.0, -1.0])   # 180-degree turn about x
        views = ViewSet([
            make_camera(cam_id=0, translation=np.array([0, 0, 5.0])),
            make_camera(cam_id=1, rotation=flipped,
                        translation=-flipped @ np.array([0, 0, -50.0])),
        ])
        feats = {i: FeatureMap(view_id=i, grid=rng.normal(size=(8, 8, 4)),
                               stride=4.0) for i in (0, 1)}
        click = Click(view_id=0, x=16, y=16)
        out, report = propagate_clicks([click], views, feats)
        assert report.propagated == 0
        assert len(report.skipped) == 1
        assert report.skipped[0]["view_id"] == 1
        assert report.skipped[0]["reason"] == "RayBehindCamera"
        assert [c for c in out if c.source == "user"] == [click]

    def test_negative_clicks_keep_polarity(self, rng):
        views = self._stereo_rig()
        feats = {cam.id: FeatureMap(view_id=cam.id,
                                    grid=rng.normal(size=(16, 16, 8)),
                                    stride=4.0) for cam in views}
        click = Click(view_id=0, x=30, y=30, polarity="neg")
        out, report = propagate_clicks([click], views, feats)
        prop = [c for c in out if c.source == "propagated"]
        assert all(c.polarity == "neg" for c in prop)

    def test_ablation_mode_ignores_geometry(self, rng):
        views = self._stereo_rig()
        feats = {}
        for cam in views:
            grid = np.zeros((16, 16, 4))
            grid[2, 2] = [1.0, 0, 0, 0]    # source feature under the click
            grid[12, 3] = [9.0, 0, 0, 0]   # global max far from any epipolar line
            feats[cam.id] = FeatureMap(view_id=cam.id, grid=grid, stride=4.0)
        click = Click(view_id=0, x=10, y=10)
        out, _ = propagate_clicks([click], views, feats, epipolar_on=False)
        prop = [c for c in out if c.source == "propagated"][0]
        assert (prop.x, prop.y) == (3.5 * 4.0, 12.5 * 4.0)
