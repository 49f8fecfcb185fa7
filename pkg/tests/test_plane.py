"""Ground-plane fitting, normal alignment, and rectification."""

import math

import numpy as np
import pytest

from ringloc.errors import DegenerateInput
from ringloc.plane import (PlaneModel, RansacPlaneParams, align_normal,
                           build_plane_transform, fit_plane_ransac, rectify)
from ringloc.se3 import PointCloud, apply, apply_points, rotation_about, rotation_angle_deg


def flat_cloud(n=1000, z=0.0, seed=0, extent=20.0):
    rng = np.random.default_rng(seed)
    xy = rng.uniform(-extent, extent, size=(n, 2))
    return np.column_stack([xy, np.full(n, z)])


def test_three_point_plane_exact():
    c = PointCloud(np.array([[0.0, 0.0, 0.0],
                             [1.0, 0.0, 0.0],
                             [0.0, 1.0, 0.0]]))
    plane, inliers = fit_plane_ransac(c, RansacPlaneParams(min_inliers=3))
    np.testing.assert_array_equal(plane.normal, [0.0, 0.0, 1.0])
    assert plane.d == 0.0
    assert len(inliers) == 3


def test_plane_through_outliers():
    rng = np.random.default_rng(1)
    pts = np.vstack([flat_cloud(1000), rng.uniform(-20, 20, size=(100, 3))])
    plane, inliers = fit_plane_ransac(PointCloud(pts))
    np.testing.assert_allclose(plane.normal, [0.0, 0.0, 1.0], atol=1e-3)
    assert abs(plane.d) < 1e-3
    assert len(inliers) >= 990


def test_offset_plane_signed_d():
    plane, _ = fit_plane_ransac(PointCloud(flat_cloud(500, z=0.5)))
    assert abs(plane.d - (-0.5)) < 1e-3


def test_normal_is_canonically_oriented():
    # Fitting the same wall from either side must give one orientation.
    pts = flat_cloud(300, seed=2)[:, [2, 0, 1]]  # x = 0 plane
    plane, _ = fit_plane_ransac(PointCloud(pts))
    np.testing.assert_allclose(plane.normal, [1.0, 0.0, 0.0], atol=1e-6)


def test_collinear_points_rejected():
    line = np.column_stack([np.linspace(0, 1, 60),
                            np.zeros(60), np.zeros(60)])
    with pytest.raises(DegenerateInput):
        fit_plane_ransac(PointCloud(line), RansacPlaneParams(min_inliers=3))


def test_too_few_inliers_rejected():
    with pytest.raises(DegenerateInput):
        fit_plane_ransac(PointCloud(flat_cloud(20)),
                         RansacPlaneParams(min_inliers=50))


def test_fit_is_deterministic_per_seed():
    c = PointCloud(np.vstack([
        flat_cloud(400, seed=3),
        np.random.default_rng(4).uniform(-20, 20, size=(80, 3)),
    ]))
    a, ia = fit_plane_ransac(c, RansacPlaneParams(seed=9))
    b, ib = fit_plane_ransac(c, RansacPlaneParams(seed=9))
    np.testing.assert_array_equal(a.normal, b.normal)
    assert a.d == b.d
    np.testing.assert_array_equal(ia, ib)


def test_unit_normal_enforced():
    with pytest.raises(DegenerateInput):
        PlaneModel(np.array([0.0, 0.0, 2.0]), 0.0)


def test_align_normal_x_axis():
    r = align_normal(np.array([1.0, 0.0, 0.0]))
    np.testing.assert_allclose(r @ [1.0, 0.0, 0.0], [0.0, 0.0, 1.0],
                               atol=1e-12)
    # 90 degrees about -y, written out as a Rodrigues evaluation
    want = rotation_about(np.array([0.0, -1.0, 0.0]), math.pi / 2)
    np.testing.assert_allclose(r, want, atol=1e-12)


def test_align_normal_identity_and_antiparallel():
    np.testing.assert_array_equal(align_normal(np.array([0.0, 0.0, 1.0])),
                                  np.eye(3))
    r = align_normal(np.array([0.0, 0.0, -1.0]))
    np.testing.assert_allclose(r @ [0.0, 0.0, -1.0], [0.0, 0.0, 1.0],
                               atol=1e-12)
    np.testing.assert_allclose(r, np.diag([1.0, -1.0, -1.0]), atol=1e-12)


def test_align_normal_random_unit_vectors():
    rng = np.random.default_rng(5)
    for _ in range(50):
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        r = align_normal(n)
        np.testing.assert_allclose(r @ n, [0.0, 0.0, 1.0], atol=1e-9)
        assert abs(np.linalg.det(r) - 1.0) < 1e-9


def test_build_plane_transform_ground_is_identity():
    t = build_plane_transform(PlaneModel(np.array([0.0, 0.0, 1.0]), 0.0))
    np.testing.assert_array_equal(t.rotation, np.eye(3))
    np.testing.assert_array_equal(t.translation, np.zeros(3))


def test_build_plane_transform_lifts_offset_plane():
    t = build_plane_transform(PlaneModel(np.array([0.0, 0.0, 1.0]), -0.5))
    np.testing.assert_allclose(apply_points(t, np.array([[3.0, 4.0, 0.5]])),
                               [[3.0, 4.0, 0.0]], atol=1e-9)


def test_build_plane_transform_vertical_plane():
    t = build_plane_transform(PlaneModel(np.array([1.0, 0.0, 0.0]), 0.0))
    out = apply_points(t, np.array([[0.0, 7.0, 2.0]]))
    assert abs(out[0, 2]) < 1e-9


def test_rectify_horizontal_scene_near_identity():
    cloud = PointCloud(np.vstack([
        flat_cloud(800, seed=6),
        np.array([[1.0, 2.0, 3.0], [4.0, -1.0, 2.0], [0.0, 5.0, 4.0]]),
    ]))
    rect, t_plane = rectify(cloud)
    assert rotation_angle_deg(t_plane.rotation) < 0.1
    assert abs(rect.xyz[:800, 2]).max() < 1e-6


def test_rectify_tilted_scene():
    tilt = rotation_about(np.array([1.0, 0.0, 0.0]), math.radians(10.0))
    base = np.vstack([flat_cloud(800, seed=7),
                      np.random.default_rng(8).uniform(-5, 5, (100, 3)) +
                      np.array([0.0, 0.0, 6.0])])
    tilted = PointCloud(base @ tilt.T)
    rect, t_plane = rectify(tilted)
    # Ground landed back on z = 0, so its normal is z to within 0.1 deg.
    plane, _ = fit_plane_ransac(rect)
    angle = math.degrees(math.acos(np.clip(plane.normal @ [0, 0, 1], -1, 1)))
    assert angle < 0.1
    assert abs(plane.d) < 0.01


def test_rectify_applies_returned_transform():
    cloud = PointCloud(np.vstack([flat_cloud(500, seed=9),
                                  np.array([[2.0, 2.0, 5.0]])]))
    rect, t_plane = rectify(cloud)
    np.testing.assert_allclose(rect.xyz, apply(t_plane, cloud).xyz,
                               atol=1e-12)
