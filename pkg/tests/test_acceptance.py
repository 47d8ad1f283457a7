"""Acceptance suite: one printed PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v`` (lines appear in the terminal
even when output capture is on) or directly with ``python3 tests/test_acceptance.py``.
"""

from __future__ import annotations

import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

import oracles
from kdfvote.cli import main as cli_main
from kdfvote.config import ExperimentConfig
from kdfvote.geom import CameraIntrinsics, Pose, project, rotation_angle
from kdfvote.metrics import add_distance, adds_distance, proj2d_distance
from kdfvote.pose import make_correspondences, procrustes_fit, solve_pnp
from kdfvote.experiment import run_experiment, sweep, time_voting
from kdfvote.synth import random_rotation
from kdfvote.voting import VoterSet, vote_scores

pytestmark = pytest.mark.slow

# sigma_t at which unoccluded distance voting lands in the 90-97% band at
# 1 px (found by a sweep over sigma_t on independent seeds)
CALIBRATED_SIGMA_T = 0.35


@pytest.fixture
def report(capsys):
    def emit(number: int, title: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'} {title}: {detail}")
    return emit


def test_criterion_1_exact_geometry(report):
    # shifted and closer than the default so that many keypoints fall off-image
    cfg = ExperimentConfig(scenes=1000, seed=101, sigma_t=0.0, translation=(0.06, 0.0, 0.3),
                           schemes=("distance",), voter_radius=0)
    t0 = time.perf_counter()
    rep = run_experiment(cfg)
    elapsed = time.perf_counter() - t0
    errs = np.array([e for r in rep.records for e in r["distance"]["keypoint_errors"]])
    kps = np.array([k for r in rep.records for k in r["gt_keypoints"]])
    off = (kps[:, 0] < 0) | (kps[:, 0] > cfg.width - 1) | (kps[:, 1] < 0) | (kps[:, 1] > cfg.height - 1)
    ok = bool(np.all(errs < 0.5)) and off.sum() > 0 and elapsed < 60
    report(1, "noiseless keypoints within 0.5 px", ok,
           f"max error {errs.max():.2e} px over {len(errs)} keypoints "
           f"({int(off.sum())} off-image, max off-image error "
           f"{errs[off].max() if off.any() else float('nan'):.2e}); {elapsed:.1f} s")
    assert ok


def test_criterion_2_occlusion_trend(report):
    cfg = ExperimentConfig(scenes=3000, seed=202, sigma_t=CALIBRATED_SIGMA_T)
    t0 = time.perf_counter()
    clear = run_experiment(cfg)
    occluded = run_experiment(cfg.replace(occlusion=True))
    elapsed = time.perf_counter() - t0
    d0 = 100 * clear.metric("distance", "proj2d_acc_toy")
    d1 = 100 * occluded.metric("distance", "proj2d_acc_toy")
    r0 = 100 * clear.metric("direction", "proj2d_acc_toy")
    r1 = 100 * occluded.metric("direction", "proj2d_acc_toy")
    calibrated = 90.0 <= d0 <= 97.0
    distance_stable = abs(d1 - d0) < 3.0
    direction_drops = r0 - r1 >= 10.0
    ok = calibrated and distance_stable and direction_drops and elapsed < 600
    report(2, "occluders hurt direction voting, not distance voting", ok,
           f"sigma_t={CALIBRATED_SIGMA_T}; distance {d0:.1f} -> {d1:.1f} "
           f"(band 90-97: {calibrated}, |change|<3: {distance_stable}); "
           f"direction {r0:.1f} -> {r1:.1f} (drop>=10: {direction_drops}); {elapsed:.0f} s")
    assert ok


def test_criterion_3_ablation_flatness(report):
    cfg = ExperimentConfig(scenes=1000, seed=303, schemes=("distance",))
    t0 = time.perf_counter()
    thetas = sweep(cfg, "theta", (0.2, 0.4, 0.8, 1.6)).metric("distance", "proj2d_acc_toy")
    t_theta = time.perf_counter() - t0
    t0 = time.perf_counter()
    hyps = sweep(cfg, "num_hypotheses", (48, 192, 768, 3072)).metric("distance", "proj2d_acc_toy")
    t_hyp = time.perf_counter() - t0
    spread = 100 * (max(thetas) - min(thetas))
    gap = 100 * abs(hyps[0] - hyps[-1])
    ok = spread < 5.0 and gap <= 1.0 and t_theta < 900 and t_hyp < 900
    report(3, "theta and hypothesis-count sweeps are flat", ok,
           f"theta acc {[round(100 * a, 1) for a in thetas]} (spread {spread:.1f} < 5); "
           f"hypotheses acc {[round(100 * a, 1) for a in hyps]} (48 vs 3072: {gap:.1f} <= 1); "
           f"{t_theta:.0f} s + {t_hyp:.0f} s")
    assert ok


def test_criterion_4_voting_runtime(report):
    timing = time_voting(ExperimentConfig(num_voters=4096, num_triples=64), repetitions=20)
    ok = timing["median_ms"] < 100.0 and timing["num_hypotheses"] == 192
    report(4, "median voting time under 100 ms", ok,
           f"median {timing['median_ms']:.1f} ms (min {timing['min_ms']:.1f}, "
           f"max {timing['max_ms']:.1f}) at 4096 voters / 192 hypotheses")
    assert ok


def _random_pose(rng) -> Pose:
    return Pose(random_rotation(rng), rng.uniform([-0.2, -0.2, 1.0], [0.2, 0.2, 3.0]))


def test_criterion_5_metric_oracles(report):
    rng = np.random.default_rng(505)
    intr = CameraIntrinsics(400.0, 400.0, 127.5, 127.5, 256, 256)
    K = (intr.fx, intr.fy, intr.cx, intr.cy)
    worst = 0.0
    for _ in range(100):
        pts = rng.uniform(-0.1, 0.1, (10, 3))
        pose, gt = _random_pose(rng), _random_pose(rng)
        args = (pose.rotation.tolist(), pose.translation.tolist(), gt.rotation.tolist(),
                gt.translation.tolist(), pts.tolist())
        worst = max(worst,
                    abs(add_distance(pose, gt, pts) - oracles.add(*args)),
                    abs(adds_distance(pose, gt, pts) - oracles.adds(*args)),
                    abs(proj2d_distance(pose, gt, pts, intr) - oracles.proj2d(*args, K)))
    violations = 0
    for _ in range(10_000):
        pts = rng.normal(size=(int(rng.integers(1, 20)), 3))
        pose, gt = _random_pose(rng), _random_pose(rng)
        violations += adds_distance(pose, gt, pts) > add_distance(pose, gt, pts)
    pair = np.array([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])
    half_turn = Pose(np.diag([-1.0, -1.0, 1.0]), np.zeros(3))
    pair_add = add_distance(half_turn, Pose.identity(), pair)
    pair_adds = adds_distance(half_turn, Pose.identity(), pair)
    ok = worst <= 1e-12 and violations == 0 and pair_add == 2.0 and pair_adds == 0.0
    report(5, "metric oracles", ok,
           f"max oracle deviation {worst:.1e}; ADD-S > ADD in {violations}/10000 trials; "
           f"pair case ADD={pair_add}, ADD-S={pair_adds}")
    assert ok


def test_criterion_6_pnp_and_procrustes(report):
    rng = np.random.default_rng(606)
    intr = CameraIntrinsics(400.0, 400.0, 127.5, 127.5, 256, 256)
    worst_r = worst_t = 0.0
    passed = 0
    for _ in range(1000):
        X = rng.uniform(-0.1, 0.1, (8, 3))
        gt = Pose(random_rotation(rng), rng.uniform([-0.05, -0.05, 0.5], [0.05, 0.05, 1.0]))
        est = solve_pnp(make_correspondences(X, project(X, gt, intr)), intr)
        dr = rotation_angle(est.rotation, gt.rotation)
        dt = float(np.linalg.norm(est.translation - gt.translation))
        worst_r, worst_t = max(worst_r, dr), max(worst_t, dt)
        passed += dr < 1e-6 and dt < 1e-6
    worst_p = 0.0
    for _ in range(1000):
        S = rng.normal(size=(int(rng.integers(3, 20)), 3))
        motion = _random_pose(rng)
        est = procrustes_fit(S, motion.apply(S))
        worst_p = max(worst_p, float(np.abs(est.as_matrix() - motion.as_matrix()).max()))
    ok = passed == 1000 and worst_p <= 1e-9
    report(6, "PnP and Procrustes recover exact poses", ok,
           f"PnP {passed}/1000 (worst {worst_r:.1e} rad, {worst_t:.1e} m); "
           f"Procrustes worst entry error {worst_p:.1e}")
    assert ok


def test_criterion_7_score_equivalence(report):
    rng = np.random.default_rng(707)
    mismatches = 0
    for i in range(500):
        nv, nh = int(rng.integers(1, 65)), int(rng.integers(1, 11))
        theta = float(rng.choice([0.2, 0.4, 1.0, rng.uniform(0.01, 3.0)]))
        if i % 2:
            # integer geometry puts many residuals exactly on the threshold
            pix = rng.integers(0, 16, (nv, 2)).astype(float)
            dist = rng.integers(0, 20, nv).astype(float)
            hyps = rng.integers(0, 16, (nh, 2)).astype(float)
            theta = float(rng.choice([1.0, 2.0]))
        else:
            pix = rng.uniform(0, 64, (nv, 2))
            dist = rng.uniform(0, 80, nv)
            hyps = rng.uniform(-10, 74, (nh, 2))
        got = vote_scores(hyps, VoterSet(pix, dist), theta).tolist()
        expected = []
        for h in hyps:
            count = 0
            for p, d in zip(pix, dist):
                if abs(math.hypot(h[0] - p[0], h[1] - p[1]) - d) < theta:
                    count += 1
            expected.append(count)
        mismatches += got != expected
    ok = mismatches == 0
    report(7, "optimized scorer equals the double-loop oracle", ok,
           f"{500 - mismatches}/500 instances identical")
    assert ok


def test_criterion_8_determinism(report, tmp_path):
    identical = []
    for command in (["run", "--scenes", "20", "--occlusion"],
                    ["sweep", "--scenes", "5", "--axis", "theta", "--values", "0.2,0.8"]):
        outs = []
        for rep in ("a", "b"):
            out = tmp_path / f"{command[0]}_{rep}"
            assert cli_main([*command, "--seed", "808", "--out", str(out)]) == 0
            outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        identical.append(outs[0] == outs[1] and len(outs[0]) > 0)
    ok = all(identical)
    report(8, "repeated CLI runs are byte-identical", ok,
           f"run identical: {identical[0]}, sweep identical: {identical[1]}")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([str(Path(__file__)), "-v"]))
