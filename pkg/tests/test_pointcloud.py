import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bodyfit.geometry import RigidTransform
from bodyfit.pointcloud import (DepthMap, PointCloud, ReflectivityVolume, downsample,
                                extract_depth_map, merge_clouds, project_depth_map,
                                smooth_depth_map)


def line_volume(values, spacing=0.01):
    return ReflectivityVolume(np.asarray(values, float).reshape(1, 1, -1), (spacing,) * 3)


# depth extraction ----------------------------------------------------------

def test_single_peak_depth():
    dm = extract_depth_map(line_volume([0, 0, 9, 0, 0]), 1.0)
    assert dm.depth[0, 0] == pytest.approx(0.02)


def test_first_peak_wins():
    dm = extract_depth_map(line_volume([0, 5, 0, 9, 0]), 1.0)
    assert dm.depth[0, 0] == pytest.approx(0.01)


def test_peak_below_threshold_skipped():
    dm = extract_depth_map(line_volume([0, 5, 0, 9, 0]), 6.0)
    assert dm.depth[0, 0] == pytest.approx(0.03)


def test_all_zero_volume_is_missing():
    vol = ReflectivityVolume(np.zeros((3, 4, 6)), (0.01,) * 3)
    assert not extract_depth_map(vol, 1.0).valid.any()
    assert not extract_depth_map(vol, 0.0).valid.any()


def test_plateau_counts_once_at_first_index():
    dm = extract_depth_map(line_volume([0, 4, 4, 4, 0]), 1.0)
    assert dm.depth[0, 0] == pytest.approx(0.01)


def test_too_few_depth_voxels():
    with pytest.raises(ValueError, match="at least 3"):
        extract_depth_map(line_volume([0, 1]), 0.5)


def test_negative_threshold_rejected():
    with pytest.raises(ValueError):
        extract_depth_map(line_volume([0, 1, 0]), -1.0)


def test_unequal_lateral_spacing_rejected():
    vol = ReflectivityVolume(np.zeros((2, 2, 4)), (0.01, 0.02, 0.01))
    with pytest.raises(ValueError, match="lateral"):
        extract_depth_map(vol, 0.5)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (3, 4, 8), elements=st.floats(0, 10)),
       st.floats(0, 10), st.floats(0, 10))
def test_raising_threshold_never_adds_pixels(values, a, b):
    lo, hi = sorted((a, b))
    vol = ReflectivityVolume(values, (0.01,) * 3)
    d_lo = extract_depth_map(vol, lo).depth
    d_hi = extract_depth_map(vol, hi).depth
    assert not (~np.isnan(d_hi) & np.isnan(d_lo)).any()
    both = ~np.isnan(d_hi) & ~np.isnan(d_lo)
    assert (d_hi[both] >= d_lo[both]).all()


# smoothing ----------------------------------------------------------------

def test_radius_zero_is_identity():
    d = np.array([[0.1, np.nan], [0.3, 0.2]])
    out = smooth_depth_map(DepthMap(d, 0.01), 0).depth
    np.testing.assert_array_equal(out, d)


def test_outlier_replaced_by_median():
    d = np.full((3, 3), 0.5)
    d[1, 1] = 5.0
    out = smooth_depth_map(DepthMap(d, 0.01), 1).depth
    assert out[1, 1] == 0.5


def test_isolated_pixel_kept_and_missing_stays_missing():
    d = np.full((3, 3), np.nan)
    d[1, 1] = 0.7
    out = smooth_depth_map(DepthMap(d, 0.01), 1).depth
    assert out[1, 1] == 0.7
    assert np.isnan(out[0, 0])


def test_negative_radius_rejected():
    with pytest.raises(ValueError):
        smooth_depth_map(DepthMap(np.zeros((2, 2)), 0.01), -1)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (5, 6), elements=st.one_of(st.floats(0, 1), st.just(np.nan))),
       st.integers(1, 2))
def test_smoothing_stays_within_range_and_keeps_mask(d, r):
    out = smooth_depth_map(DepthMap(d, 0.01), r).depth
    valid = ~np.isnan(d)
    np.testing.assert_array_equal(~np.isnan(out), valid)
    if valid.any():
        assert out[valid].min() >= d[valid].min()
        assert out[valid].max() <= d[valid].max()


@given(st.floats(0, 2), st.integers(1, 3))
def test_constant_map_is_fixed_point(c, r):
    d = np.full((4, 5), c)
    out = smooth_depth_map(DepthMap(d, 0.01), r).depth
    np.testing.assert_array_equal(out, d)


# projection ---------------------------------------------------------------

def test_identity_pose_projection():
    d = np.full((2, 3), np.nan)
    d[1, 2] = 0.4
    cloud = project_depth_map(DepthMap(d, 0.01, "front"), RigidTransform.identity())
    np.testing.assert_allclose(cloud.points, [[0.02, 0.01, 0.4]])
    assert list(cloud.source_panel) == ["front"]


def test_back_panel_yaw():
    rot = np.diag([-1.0, 1.0, -1.0])
    d = np.array([[0.3]])
    cloud = project_depth_map(DepthMap(d, 0.01, "back"), RigidTransform(rot, [0, 0, 1.0]))
    np.testing.assert_allclose(cloud.points, [[0.0, 0.0, 0.7]])


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (3,), elements=st.floats(-3, 3)),
       arrays(np.float64, (3,), elements=st.floats(-2, 2)))
def test_projection_round_trip(rotvec, trans):
    from scipy.spatial.transform import Rotation
    pose = RigidTransform(Rotation.from_rotvec(rotvec).as_matrix(), trans)
    d = np.random.default_rng(0).random((4, 4))
    cloud = project_depth_map(DepthMap(d, 0.01), pose)
    local = pose.inverse().apply(cloud.points)
    r, c = np.nonzero(np.ones_like(d, bool))
    np.testing.assert_allclose(local, np.column_stack([c * 0.01, r * 0.01, d[r, c]]), atol=1e-9)


def test_all_missing_projects_to_empty():
    cloud = project_depth_map(DepthMap(np.full((3, 3), np.nan), 0.01), RigidTransform.identity())
    assert len(cloud) == 0


# merge and downsample -----------------------------------------------------

def test_merge_sizes_and_tags():
    rng = np.random.default_rng(1)
    a = PointCloud(rng.random((10, 3)), np.full(10, "front"))
    b = PointCloud(rng.random((7, 3)), np.full(7, "back"))
    m = merge_clouds([a, b])
    assert len(m) == 17
    assert list(m.source_panel[9:11]) == ["front", "back"]


def test_merge_single_and_empty():
    a = PointCloud(np.random.default_rng(2).random((5, 3)))
    np.testing.assert_array_equal(merge_clouds([a]).points, a.points)
    assert len(merge_clouds([])) == 0
    assert len(merge_clouds([PointCloud(np.zeros((0, 3))), a])) == 5


def test_two_points_in_one_cell_average():
    c = downsample(PointCloud([[0.001, 0.002, 0.003], [0.005, 0.004, 0.009]]), 0.01)
    np.testing.assert_allclose(c.points, [[0.003, 0.003, 0.006]])


def test_distinct_cells_kept():
    pts = np.array([[0.005, 0.005, 0.005], [0.015, 0.005, 0.005], [0.005, 0.025, 0.005]])
    c = downsample(PointCloud(pts), 0.01)
    assert len(c) == 3


def test_downsample_tags_mixed_cells():
    c = downsample(PointCloud([[0.001] * 3, [0.002] * 3, [0.5] * 3], ["front", "back", "back"]), 0.01)
    assert sorted(c.source_panel) == ["back", "mixed"]


def test_downsample_rejects_bad_spacing():
    with pytest.raises(ValueError):
        downsample(PointCloud(np.zeros((1, 3))), 0.0)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (40, 3), elements=st.floats(-1, 1)), st.floats(0.01, 0.5))
def test_downsample_one_point_per_cell(pts, s):
    out = downsample(PointCloud(pts), s)
    keys = np.floor(pts / s).astype(np.int64)
    assert len(out) == len(np.unique(keys, axis=0))
    assert out.points.min() >= pts.min() - 1e-12
    assert out.points.max() <= pts.max() + 1e-12
