from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_pose
from kdfvote.errors import BehindCameraError, DegenerateConfigurationError, NonConvergenceError
from kdfvote.geom import CameraIntrinsics, Pose, project, rotation_angle, so3_exp, transform_points
from kdfvote.pose import (Correspondence, StereoRig, make_correspondences, procrustes_fit,
                          reprojection_rmse, right_camera_projection, solve_pnp, solve_pnp_axial,
                          stereo_pose, triangulate_stereo)

RZ90 = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])


def _scene(rng, intr, n=8, planar=False):
    X = rng.uniform(-0.5, 0.5, (n, 3))
    if planar:
        X[:, 2] = 0.0
    pose = random_pose(rng)
    return X, pose, make_correspondences(X, project(X, pose, intr))


def _assert_pose_close(a: Pose, b: Pose, rot_tol, trans_tol):
    assert rotation_angle(a.rotation, b.rotation) < rot_tol
    assert np.linalg.norm(a.translation - b.translation) < trans_tol


def test_pnp_noiseless_eight_points(rng, intr):
    for _ in range(50):
        X, pose, corr = _scene(rng, intr)
        est = solve_pnp(corr, intr)
        _assert_pose_close(est, pose, 1e-6, 1e-6)
        assert reprojection_rmse(est, corr, intr) < 1e-6


def test_pnp_identity_pose(rng, intr):
    X = rng.uniform(-0.5, 0.5, (8, 3)) + [0, 0, 3]
    corr = make_correspondences(X, project(X, Pose.identity(), intr))
    est = solve_pnp(corr, intr)
    np.testing.assert_allclose(est.rotation, np.eye(3), atol=1e-9)
    np.testing.assert_allclose(est.translation, 0.0, atol=1e-9)


@pytest.mark.parametrize("n,planar", [(4, False), (5, False), (4, True), (10, True)])
def test_pnp_small_and_planar_sets(rng, intr, n, planar):
    for _ in range(10):
        X, pose, corr = _scene(rng, intr, n, planar)
        est = solve_pnp(corr, intr)
        assert reprojection_rmse(est, corr, intr) < 1e-6


def test_pnp_errors(rng, intr):
    X, pose, corr = _scene(rng, intr)
    with pytest.raises(ValueError):
        solve_pnp(corr[:3], intr)
    line = np.outer(np.linspace(-1, 1, 5), [1.0, 2.0, 0.5])
    with pytest.raises(DegenerateConfigurationError):
        solve_pnp(make_correspondences(line, project(line, pose, intr)), intr)


def test_pnp_nonconvergence_carries_best_iterate(rng, intr):
    X, pose, corr = _scene(rng, intr)
    noisy = make_correspondences(X, [c.point2 + rng.normal(0, 2, 2) for c in corr])
    with pytest.raises(NonConvergenceError) as info:
        solve_pnp(noisy, intr, max_iter=1)
    assert isinstance(info.value.pose, Pose) and info.value.rmse > 0


def test_pnp_refinement_never_increases_cost(rng, intr):
    X, pose, corr = _scene(rng, intr, n=12)
    noisy = make_correspondences(X, [c.point2 + rng.normal(0, 3, 2) for c in corr])
    costs = []
    for k in range(1, 15):
        try:
            est = solve_pnp(noisy, intr, max_iter=k)
        except NonConvergenceError as exc:
            est = exc.pose
        costs.append(reprojection_rmse(est, noisy, intr))
    assert all(b <= a + 1e-12 for a, b in zip(costs, costs[1:]))


def test_pnp_weights(rng, intr):
    X, pose, corr = _scene(rng, intr, n=10)
    pts = np.array([c.point2 for c in corr])
    pts[0] += 50.0  # gross outlier, weight zero
    w = np.ones(10)
    w[0] = 0.0
    est = solve_pnp(make_correspondences(X, pts, w), intr)
    _assert_pose_close(est, pose, 1e-6, 1e-6)
    with pytest.raises(ValueError):
        Correspondence((0, 0, 0), (0, 0), -1.0)


def test_axial_pnp_recovers_line_pose(rng, intr):
    X = np.outer(np.linspace(-0.1, 0.1, 4), [0, 0, 1.0])
    for _ in range(50):
        pose = Pose(random_pose(rng).rotation, (0, 0, 0.35))
        corr = make_correspondences(X, project(X, pose, intr))
        est = solve_pnp_axial(corr, intr)
        np.testing.assert_allclose(transform_points(X, est), transform_points(X, pose), atol=1e-9)
    with pytest.raises(DegenerateConfigurationError):
        solve_pnp_axial(make_correspondences(rng.normal(size=(4, 3)), rng.normal(size=(4, 2))), intr)


def test_reprojection_rmse_examples(rng, intr):
    X, pose, corr = _scene(rng, intr)
    assert reprojection_rmse(pose, corr, intr) < 1e-9
    shifted = make_correspondences(X, [c.point2 + [0.6, 0.8] for c in corr])
    assert reprojection_rmse(pose, shifted, intr) == pytest.approx(1.0, abs=1e-9)
    noise = rng.normal(size=(len(X), 2))
    rmses = [reprojection_rmse(pose, make_correspondences(
        X, [c.point2 + k * n for c, n in zip(corr, noise)]), intr) for k in (0.0, 0.1, 0.5, 2.0)]
    assert rmses == sorted(rmses)
    behind = Pose(np.eye(3), (0, 0, -10))
    with pytest.raises(BehindCameraError):
        reprojection_rmse(behind, corr, intr)


def _rig(fx=100.0):
    cam = CameraIntrinsics(fx, fx, 64.0, 48.0, 96, 128)
    return StereoRig(cam, cam, 0.1)


def test_triangulate_examples():
    rig = _rig()
    Z = triangulate_stereo((74.0, 48.0), (64.0, 48.0), rig)[2]
    assert Z == pytest.approx(1.0, abs=1e-12)
    p = triangulate_stereo((64.0, 48.0), (54.0, 48.0), rig)
    assert p[0] == 0.0 and p[1] == 0.0
    with pytest.raises(DegenerateConfigurationError):
        triangulate_stereo((64.0, 48.0), (64.0, 48.0), rig)
    with pytest.raises(ValueError):
        StereoRig(rig.left, rig.right, 0.0)


@settings(max_examples=100)
@given(x=st.floats(-0.5, 0.5), y=st.floats(-0.5, 0.5), z=st.floats(0.5, 5.0))
def test_triangulate_reprojects(x, y, z):
    rig = _rig()
    p = np.array([x, y, z])
    left = project(p, Pose.identity(), rig.left)
    right = right_camera_projection(p, rig)
    q = triangulate_stereo(left, right, rig)
    np.testing.assert_allclose(project(q, Pose.identity(), rig.left), left, atol=1e-6)
    np.testing.assert_allclose(right_camera_projection(q, rig), right, atol=1e-6)


def test_procrustes_examples(rng):
    S = rng.normal(size=(10, 3))
    ident = procrustes_fit(S, S)
    np.testing.assert_allclose(ident.rotation, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(ident.translation, 0.0, atol=1e-12)
    T = S @ RZ90.T + [1.0, 0.0, 0.0]
    est = procrustes_fit(S, T)
    np.testing.assert_allclose(est.rotation, RZ90, atol=1e-9)
    np.testing.assert_allclose(est.translation, [1, 0, 0], atol=1e-9)
    mirrored = S * [1, 1, -1]
    R = procrustes_fit(S, mirrored).rotation
    assert np.linalg.det(R) == pytest.approx(1.0)


def test_procrustes_errors(rng):
    S = rng.normal(size=(5, 3))
    with pytest.raises(ValueError):
        procrustes_fit(S[:2], S[:2])
    with pytest.raises(ValueError):
        procrustes_fit(S, S[:4])
    line = np.outer(np.arange(4.0), [1, 1, 0])
    with pytest.raises(DegenerateConfigurationError):
        procrustes_fit(line, line)


def test_procrustes_residual_invariant_to_common_motion(rng):
    S = rng.normal(size=(8, 3))
    T = S @ so3_exp([0.2, 0.1, -0.3]).T + rng.normal(0, 0.05, (8, 3))

    def residual(a, b):
        p = procrustes_fit(a, b)
        return np.sum((transform_points(a, p) - b) ** 2)

    g = random_pose(rng)
    assert residual(transform_points(S, g), transform_points(T, g)) == pytest.approx(
        residual(S, T), abs=1e-9)


def test_stereo_pose_recovers_model(rng):
    rig = _rig(400.0)
    model_kps = rng.uniform(-0.05, 0.05, (6, 3))
    pose = Pose(so3_exp([0.3, -0.2, 0.5]), (0.02, -0.01, 0.8))
    cam = transform_points(model_kps, pose)
    left = project(cam, Pose.identity(), rig.left)
    right = np.array([right_camera_projection(p, rig) for p in cam])
    est = stereo_pose(left, right, model_kps, rig)
    _assert_pose_close(est, pose, 1e-9, 1e-9)
