from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import random_pose
from kdfvote import metrics
from kdfvote.errors import BehindCameraError
from kdfvote.geom import ObjectModel, Pose, SymmetryGroup, so3_exp
from kdfvote.metrics import (EvalThresholds, accuracy, add_distance, adds_distance, auc,
                             pose_distance, proj2d_distance)

RZ180 = np.diag([-1.0, -1.0, 1.0])


def _lists(pose):
    return pose.rotation.tolist(), pose.translation.tolist()


def test_identical_poses_give_zero(rng, intr):
    pts = rng.normal(size=(10, 3))
    pose = random_pose(rng)
    assert add_distance(pose, pose, pts) == 0.0
    assert adds_distance(pose, pose, pts) == 0.0
    assert proj2d_distance(pose, pose, pts, intr) == 0.0


def test_add_uniform_shift(rng):
    pts = rng.normal(size=(10, 3))
    gt = random_pose(rng)
    shifted = Pose(np.eye(3), (0, 0, 0.01)) @ gt
    assert add_distance(shifted, gt, pts) == pytest.approx(0.01, abs=1e-15)


def test_centered_pair_rotated_half_turn():
    pts = np.array([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])
    gt = Pose.identity()
    pose = Pose(RZ180, np.zeros(3))
    assert add_distance(pose, gt, pts) == 2.0
    assert adds_distance(pose, gt, pts) == 0.0


def test_metrics_match_naive_oracles(rng, intr):
    K = (intr.fx, intr.fy, intr.cx, intr.cy)
    for _ in range(20):
        pts = rng.uniform(-0.1, 0.1, (10, 3))
        pose, gt = random_pose(rng), random_pose(rng)
        args = (*_lists(pose), *_lists(gt), pts.tolist())
        assert abs(add_distance(pose, gt, pts) - oracles.add(*args)) < 1e-12
        assert abs(adds_distance(pose, gt, pts) - oracles.adds(*args)) < 1e-12
        assert abs(proj2d_distance(pose, gt, pts, intr) - oracles.proj2d(*args, K)) < 1e-12


def test_proj2d_small_lateral_shift(rng, intr):
    pts = rng.uniform(-0.05, 0.05, (10, 3))
    gt = Pose(np.eye(3), (0, 0, 2.0))
    delta = 1e-4
    moved = Pose(np.eye(3), (delta, 0, 2.0))
    # each point shifts by f*delta/Z_i exactly for a pure lateral translation
    z = pts[:, 2] + 2.0
    expected = np.mean(intr.fx * delta / z)
    assert proj2d_distance(moved, gt, pts, intr) == pytest.approx(expected, rel=1e-9)
    assert expected == pytest.approx(intr.fx * delta / 2.0, rel=0.05)


def test_proj2d_behind_camera(intr):
    with pytest.raises(BehindCameraError):
        proj2d_distance(Pose(np.eye(3), (0, 0, -1)), Pose(np.eye(3), (0, 0, 1)),
                        np.zeros((1, 3)), intr)


@settings(max_examples=100)
@given(seed=st.integers(0, 2**32 - 1))
def test_adds_never_exceeds_add(seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(rng.integers(1, 30), 3))
    pose, gt = random_pose(rng), random_pose(rng)
    assert adds_distance(pose, gt, pts) <= add_distance(pose, gt, pts)


def test_adds_kdtree_path_matches_exact(rng, monkeypatch):
    pts = rng.normal(size=(300, 3))
    pose, gt = random_pose(rng), random_pose(rng)
    exact = adds_distance(pose, gt, pts)
    monkeypatch.setattr(metrics, "EXACT_NN_LIMIT", 10)
    assert adds_distance(pose, gt, pts) == pytest.approx(exact, abs=1e-12)


def test_add_invariant_under_common_motion(rng):
    pts = rng.normal(size=(20, 3))
    pose, gt, g = random_pose(rng), random_pose(rng), random_pose(rng)
    assert add_distance(g @ pose, g @ gt, pts) == pytest.approx(add_distance(pose, gt, pts),
                                                                 abs=1e-9)


def test_pose_distance_routes_by_symmetry(rng):
    pts = np.array([[1.0, 0, 0], [-1.0, 0, 0], [0, 0.5, 0], [0, -0.5, 0], [0, 0, 0.1]])
    kps = pts[:4]
    plain = ObjectModel(pts, kps)
    sym = ObjectModel(pts, kps, symmetry=SymmetryGroup([(1, 0, 3, 2)]))
    pose, gt = Pose(RZ180, np.zeros(3)), Pose.identity()
    assert pose_distance(pose, gt, plain) == add_distance(pose, gt, pts)
    assert pose_distance(pose, gt, sym) == adds_distance(pose, gt, pts) == 0.0


def test_accuracy_examples():
    assert accuracy([0, 0, 0], 1.0) == 1.0
    assert accuracy([2, 3], 1.0) == 0.0
    assert accuracy([0.5, 1.5], 1.0) == 0.5
    assert accuracy([1.0], 1.0) == 0.0  # strict
    assert accuracy([np.inf, np.nan, 0.1], 1.0) == pytest.approx(1 / 3)
    with pytest.raises(ValueError):
        accuracy([], 1.0)
    with pytest.raises(ValueError):
        accuracy([1.0], 0.0)


def test_auc_examples():
    assert auc([0.0, 0.0], 0.1) == 1.0
    assert auc([0.1, 0.5], 0.1) == 0.0
    assert auc([0.05], 0.1) == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(ValueError):
        auc([], 0.1)


def test_auc_matches_numeric_integral(rng):
    d = rng.uniform(0, 0.15, 50)
    grid = np.linspace(0, 0.1, 200001)
    acc = (d[None, :] < grid[:, None]).mean(axis=1)
    trapezoid = getattr(np, "trapezoid", None) or np.trapz
    numeric = trapezoid(acc, grid) / 0.1
    assert auc(d, 0.1) == pytest.approx(numeric, abs=1e-4)


@settings(max_examples=50)
@given(seed=st.integers(0, 2**32 - 1))
def test_auc_monotone(seed):
    rng = np.random.default_rng(seed)
    d = rng.uniform(0, 0.2, 20)
    assert auc(d + rng.uniform(0, 0.05, 20), 0.1) <= auc(d, 0.1)


def test_thresholds_defaults_and_validation():
    th = EvalThresholds()
    assert (th.add_fraction, th.proj_pixels, th.toy_proj_pixels, th.auc_max) == (0.1, 5.0, 1.0, 0.1)
    with pytest.raises(ValueError):
        EvalThresholds(auc_max=0)


def test_generic_model_zero_iff_equal(rng, intr):
    pts = rng.normal(size=(10, 3))
    gt = random_pose(rng)
    nudged = Pose(so3_exp([1e-6, 0, 0]) @ gt.rotation, gt.translation)
    assert add_distance(nudged, gt, pts) > 0
    assert adds_distance(nudged, gt, pts) > 0
    assert proj2d_distance(nudged, gt, pts, intr) > 0
