import math

import numpy as np
import pytest

from discurate.imaging import (
    Box2,
    DepthMap,
    GrayImage,
    ViewObservation,
    canonicalize_rotation,
    depth_label_map,
    draw_box_overlay,
    geodesic_angle,
    is_overexposed,
    load_depth_map,
    load_gray_image,
    luma_from_rgb,
    max_coverage_frames,
    project_points,
    rank_object_views,
    sample_frames_by_pose,
    sample_frames_uniform,
    visibility_ratio,
)


def looking_along_x_pose(position=(0.0, 0.0, 0.0)) -> np.ndarray:
    """World-from-camera pose: forward +x, image right -y, image down -z."""
    pose = np.eye(4)
    # columns: camera x (image right), y (image down), z (forward) in world
    pose[:3, 0] = (0, -1, 0)
    pose[:3, 1] = (0, 0, -1)
    pose[:3, 2] = (1, 0, 0)
    pose[:3, 3] = position
    return pose


def rolled(pose: np.ndarray, degrees: float) -> np.ndarray:
    psi = math.radians(degrees)
    c, s = math.cos(psi), math.sin(psi)
    rz = np.array([[c, -s, 0, 0], [s, c, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]])
    return pose @ rz


class TestOverexposure:
    def test_all_bright(self):
        img = GrayImage(np.full((10, 10), 255, dtype=np.uint8))
        assert is_overexposed(img)

    def test_all_mid(self):
        img = GrayImage(np.full((10, 10), 128, dtype=np.uint8))
        assert not is_overexposed(img)

    def test_strict_boundary_90_of_100(self):
        px = np.zeros((10, 10), dtype=np.uint8)
        px.flat[:90] = 255
        assert not is_overexposed(GrayImage(px))
        px.flat[:91] = 255
        assert is_overexposed(GrayImage(px))

    def test_threshold_intensity_is_strict(self):
        # 245 itself does not count as bright
        img = GrayImage(np.full((4, 4), 245, dtype=np.uint8))
        assert not is_overexposed(img)

    def test_monotone_in_intensity(self):
        rng = np.random.default_rng(5)
        px = rng.integers(0, 256, size=(20, 20)).astype(np.uint8)
        img = GrayImage(px)
        brighter = GrayImage(np.clip(px.astype(int) + 40, 0, 255).astype(np.uint8))
        if is_overexposed(img):
            assert is_overexposed(brighter)


class TestCanonicalizeRotation:
    def test_upright_camera(self):
        deg, degenerate = canonicalize_rotation(looking_along_x_pose())
        assert (deg, degenerate) == (0, False)

    def test_rolled_90_restores(self):
        deg, degenerate = canonicalize_rotation(rolled(looking_along_x_pose(), 90))
        assert not degenerate
        assert deg == 270  # forced by the minimization

    def test_small_rolls_need_no_rotation(self):
        # oracle: brute force over all four rotations via expected formula
        rng = np.random.default_rng(6)
        for _ in range(50):
            theta = float(rng.uniform(-45.0, 45.0))
            if abs(abs(theta) - 45.0) < 1e-6:
                continue
            deg, degenerate = canonicalize_rotation(
                rolled(looking_along_x_pose(), theta))
            assert not degenerate
            assert deg == 0

    def test_all_quadrants(self):
        for theta, expected in ((0, 0), (90, 270), (180, 180), (-90, 90)):
            deg, _ = canonicalize_rotation(rolled(looking_along_x_pose(), theta))
            assert deg == expected

    def test_composition_yields_zero(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            theta = float(rng.uniform(-180, 180))
            pose = rolled(looking_along_x_pose(), theta)
            deg, degenerate = canonicalize_rotation(pose)
            if degenerate:
                continue
            fixed = rolled(pose, deg)
            assert canonicalize_rotation(fixed)[0] == 0

    def test_degenerate_downward_camera(self):
        pose = np.eye(4)
        pose[:3, 0] = (1, 0, 0)
        pose[:3, 1] = (0, -1, 0)
        pose[:3, 2] = (0, 0, -1)  # looking straight down
        deg, degenerate = canonicalize_rotation(pose)
        assert (deg, degenerate) == (0, True)


class TestDepthLabelMap:
    def test_single_box(self):
        depth = DepthMap(np.full((6, 6), 2.0))
        labels, ids, missing = depth_label_map(
            [Box2("a", 1, 1, 3, 2)], depth)
        assert ids == ["a"]
        assert missing == []
        assert (labels[1:3, 1:4] == 0).all()
        assert (labels == 0).sum() == 6

    def test_near_box_covers_far(self):
        depth = np.full((8, 8), 3.0)
        depth[2:5, 2:5] = 1.5
        labels, ids, _ = depth_label_map(
            [Box2("far", 0, 0, 6, 6), Box2("near", 2, 2, 4, 4)],
            DepthMap(depth))
        assert labels[3, 3] == ids.index("near")
        assert labels[0, 0] == ids.index("far")

    def test_no_valid_depth_painted_first(self):
        depth = np.zeros((6, 6))
        depth[0:3, 0:3] = 2.0
        labels, ids, missing = depth_label_map(
            [Box2("void", 3, 0, 5, 5), Box2("seen", 0, 0, 3, 3)],
            DepthMap(depth))
        assert missing == ["void"]
        # the measurable box paints over the depthless one where they overlap
        assert labels[2, 3] == ids.index("seen")
        assert labels[5, 5] == ids.index("void")

    def test_label_belongs_to_containing_box(self):
        rng = np.random.default_rng(9)
        depth = DepthMap(rng.uniform(0.5, 5.0, size=(16, 16)))
        boxes = []
        for i in range(5):
            x0, y0 = rng.integers(0, 10, 2)
            boxes.append(Box2(f"o{i}", int(x0), int(y0),
                              int(x0 + rng.integers(1, 6)),
                              int(y0 + rng.integers(1, 6))))
        labels, ids, _ = depth_label_map(boxes, depth)
        by_id = {b.object_id: b for b in boxes}
        for y in range(16):
            for x in range(16):
                if labels[y, x] >= 0:
                    b = by_id[ids[labels[y, x]]]
                    assert b.x_min <= x <= b.x_max and b.y_min <= y <= b.y_max

    def test_clamps_out_of_bounds(self):
        depth = DepthMap(np.full((4, 4), 1.0))
        labels, ids, _ = depth_label_map([Box2("a", -3, -3, 10, 10)], depth)
        assert (labels == 0).all()


class TestSampleFrames:
    def test_uniform_100_to_10(self):
        assert sample_frames_uniform(100, 10) == \
            [0, 11, 22, 33, 44, 55, 66, 77, 88, 99]

    def test_uniform_returns_min_of_target_and_count(self):
        assert sample_frames_uniform(3, 10) == [0, 1, 2]
        assert len(sample_frames_uniform(50, 7)) == 7

    def test_uniform_sorted_unique(self):
        out = sample_frames_uniform(37, 12)
        assert out == sorted(set(out))

    def test_identical_poses_one_cluster(self):
        poses = [np.eye(4)] * 3
        assert sample_frames_by_pose(poses, 10) == [0]

    def test_line_of_poses_one_cluster_each(self):
        poses = []
        for i in range(5):
            p = np.eye(4)
            p[0, 3] = float(i)  # 1 m apart
            poses.append(p)
        assert sample_frames_by_pose(poses, 10,
                                     translation_threshold=0.5) == [0, 1, 2, 3, 4]

    def test_rotation_contributes_to_distance(self):
        a = np.eye(4)
        b = np.eye(4)
        b[:3, :3] = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1]])  # 90 deg turn
        # same position, but 0.5 * pi/2 ~ 0.785 m-equivalent > threshold
        assert sample_frames_by_pose([a, b], 10) == [0, 1]

    def test_truncates_to_target(self):
        poses = []
        for i in range(8):
            p = np.eye(4)
            p[1, 3] = float(i)
            poses.append(p)
        assert sample_frames_by_pose(poses, 3) == [0, 1, 2]


class TestMaxCoverage:
    def test_greedy_forced(self):
        visible = {"A": {"1", "2"}, "B": {"2"}, "C": {"3"}}
        assert max_coverage_frames(visible, cap=2) == ["A", "C"]

    def test_identical_frames_single_pick(self):
        visible = {"f2": {"x"}, "f1": {"x"}}
        assert max_coverage_frames(visible) == ["f1"]  # tie-break smallest id

    def test_full_coverage_when_cap_allows(self):
        rng = np.random.default_rng(13)
        for _ in range(20):
            objs = [f"o{i}" for i in range(rng.integers(2, 9))]
            visible = {
                f"f{j}": {o for o in objs if rng.random() < 0.4}
                for j in range(rng.integers(2, 10))
            }
            coverable = set().union(*visible.values())
            chosen = max_coverage_frames(visible, cap=32)
            covered = set().union(*(visible[f] for f in chosen)) if chosen else set()
            assert covered == coverable

    def test_coverage_monotone_in_cap(self):
        visible = {"a": {"1"}, "b": {"2"}, "c": {"3", "4"}, "d": {"1", "4"}}
        sizes = []
        for cap in range(1, 5):
            chosen = max_coverage_frames(visible, cap=cap)
            covered = set().union(*(visible[f] for f in chosen))
            sizes.append(len(covered))
        assert sizes == sorted(sizes)


class TestRankViews:
    def test_single_centered_frame(self):
        obs = ViewObservation("f0", 0.8, (50.0, 50.0), (100, 100))
        assert rank_object_views([obs]) == [obs]

    def test_centered_beats_cornered_at_equal_ratio(self):
        centered = ViewObservation("f1", 0.6, (50.0, 50.0), (100, 100))
        corner = ViewObservation("f0", 0.6, (0.0, 0.0), (100, 100))
        assert rank_object_views([corner, centered])[0] is centered

    def test_score_formula_tradeoff(self):
        # 0.9 at the exact corner scores 0.9 - 0.5*1 = 0.4 < 0.5 centered
        corner = ViewObservation("fa", 0.9, (0.0, 0.0), (100, 100))
        centered = ViewObservation("fb", 0.5, (50.0, 50.0), (100, 100))
        assert rank_object_views([corner, centered])[0] is centered

    def test_empty(self):
        assert rank_object_views([]) == []


class TestProjection:
    def test_project_known_point(self):
        pose = looking_along_x_pose()
        px, z = project_points(np.array([[2.0, 0.0, 0.0]]), pose,
                               fx=100, fy=100, cx=32, cy=32)
        assert z[0] == pytest.approx(2.0)
        assert px[0] == pytest.approx((32.0, 32.0))

    def test_point_behind_camera(self):
        pose = looking_along_x_pose()
        _, z = project_points(np.array([[-1.0, 0.0, 0.0]]), pose,
                              fx=100, fy=100, cx=32, cy=32)
        assert z[0] < 0

    def test_visibility_counts_in_frame_points(self):
        pose = looking_along_x_pose()
        pts = np.array([[2.0, 0.0, 0.0], [-2.0, 0.0, 0.0]])
        ratio = visibility_ratio(pts, pose, 10, 10, 32, 32, (64, 64))
        assert ratio == pytest.approx(0.5)

    def test_visibility_respects_depth_occlusion(self):
        pose = looking_along_x_pose()
        pts = np.array([[2.0, 0.0, 0.0]])
        occluded = DepthMap(np.full((64, 64), 1.0))  # wall at 1 m
        assert visibility_ratio(pts, pose, 10, 10, 32, 32, (64, 64),
                                occluded) == 0.0
        matching = DepthMap(np.full((64, 64), 2.0))
        assert visibility_ratio(pts, pose, 10, 10, 32, 32, (64, 64),
                                matching) == 1.0


class TestRasterIO:
    def test_luma_weights(self):
        rgb = np.zeros((1, 1, 3), dtype=np.uint8)
        rgb[0, 0] = (255, 0, 0)
        assert luma_from_rgb(rgb)[0, 0] == round(0.299 * 255)

    def test_png_roundtrip(self, tmp_path):
        from PIL import Image

        arr = np.arange(64, dtype=np.uint8).reshape(8, 8)
        p = tmp_path / "img.png"
        Image.fromarray(arr, mode="L").save(p)
        img = load_gray_image(p)
        assert (img.pixels == arr).all()
        assert (img.width, img.height) == (8, 8)

    def test_rgb_png_converted(self, tmp_path):
        from PIL import Image

        arr = np.zeros((4, 4, 3), dtype=np.uint8)
        arr[..., 1] = 200
        p = tmp_path / "rgb.png"
        Image.fromarray(arr, mode="RGB").save(p)
        img = load_gray_image(p)
        assert img.pixels[0, 0] == round(0.587 * 200)

    def test_depth_mm_png(self, tmp_path):
        from PIL import Image

        arr = np.full((4, 4), 1500, dtype=np.uint16)
        p = tmp_path / "d.png"
        Image.fromarray(arr).save(p)
        depth = load_depth_map(p, "mm")
        assert depth.depths[0, 0] == pytest.approx(1.5)

    def test_depth_npy_meters(self, tmp_path):
        arr = np.full((4, 4), 2.5, dtype=np.float32)
        p = tmp_path / "d.npy"
        np.save(p, arr)
        depth = load_depth_map(p, "m")
        assert depth.depths[0, 0] == pytest.approx(2.5)

    def test_overlay_marks_edges(self):
        img = GrayImage(np.zeros((10, 10), dtype=np.uint8))
        out = draw_box_overlay(img, [Box2("a", 2, 2, 7, 7)], value=200)
        assert out.pixels[2, 2] == 200
        assert out.pixels[4, 4] == 0
        assert img.pixels[2, 2] == 0  # original untouched


class TestGeodesic:
    def test_quarter_turn(self):
        r = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1]], dtype=float)
        assert geodesic_angle(np.eye(3), r) == pytest.approx(math.pi / 2)

    def test_identity(self):
        assert geodesic_angle(np.eye(3), np.eye(3)) == pytest.approx(0.0)
