"""Experiment orchestration: per-scene pipeline, reports, sweeps and voting timing."""

from __future__ import annotations

import csv
import io
import json
import logging
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import SWEEP_AXES, ExperimentConfig
from .errors import ConfigError, KDFError, NonConvergenceError
from .kdf import build_kdf, symmetric_kdf_loss
from .metrics import accuracy, adds_distance, add_distance, auc, pose_distance, proj2d_distance
from .pose import is_collinear, make_correspondences, solve_pnp, solve_pnp_axial
from .synth import (corrupt_direction_field, corrupt_field, make_stick_scene, occlude_keypoints,
                    write_scene)
from .voting import (VotingConfig, build_direction_field, direction_vote_keypoint,
                     vote_keypoint)

log = logging.getLogger(__name__)

SCHEMES = ("distance", "direction")
METRICS = ("proj2d_acc_toy", "proj2d_acc", "adds_acc", "adds_auc", "kp_acc_1px",
           "kp_err_median", "failures")


def scene_seed(master_seed: int, index: int) -> int:
    return master_seed ^ index


def _streams(seed: int):
    """Independent streams: geometry, distance noise, direction noise, two voting seeds."""
    geom, dnoise, anoise, dist, direc = np.random.SeedSequence(seed).spawn(5)
    vote_seed = int(dist.generate_state(1, np.uint64)[0])
    dir_seed = int(direc.generate_state(1, np.uint64)[0])
    return (np.random.default_rng(geom), np.random.default_rng(dnoise),
            np.random.default_rng(anoise), vote_seed, dir_seed)


def _solve_pose(model, kps2d, intrinsics):
    corr = make_correspondences(model.keypoints, kps2d)
    try:
        if is_collinear(model.keypoints):
            return solve_pnp_axial(corr, intrinsics)
        return solve_pnp(corr, intrinsics)
    except NonConvergenceError as exc:
        return exc.pose


def _scheme_record(votes, scene, model, cfg: ExperimentConfig):
    intr = cfg.intrinsics()
    rec: dict = {"status": "ok"}
    kps = np.array([h.location for h in votes])
    err = np.linalg.norm(kps - scene.keypoints2d, axis=1)
    rec["keypoints"] = kps.tolist()
    rec["keypoint_errors"] = err.tolist()
    rec["scores"] = [h.score for h in votes]
    rec["reliable"] = [h.reliable for h in votes]
    try:
        pose = _solve_pose(model, kps, intr)
        rec["pose"] = pose.to_dict()
        rec["proj2d"] = proj2d_distance(pose, scene.pose, model, intr)
        rec["add"] = add_distance(pose, scene.pose, model)
        rec["adds"] = adds_distance(pose, scene.pose, model)
        rec["pose_distance"] = pose_distance(pose, scene.pose, model)
    except (KDFError, ValueError, np.linalg.LinAlgError) as exc:
        rec.update(status=f"pose: {exc}", pose=None, proj2d=None, add=None, adds=None,
                   pose_distance=None)
    return rec


def _failed_record(kind: str, exc: Exception, k: int):
    return {"status": f"{kind} keypoint {k}: {exc}", "keypoints": None, "keypoint_errors": None,
            "scores": None, "reliable": None, "pose": None, "proj2d": None, "add": None,
            "adds": None, "pose_distance": None}


def _scene_loss(preds, scene, model, cfg: ExperimentConfig):
    # a keypoint far off-image has no pixels inside the loss crop
    try:
        return symmetric_kdf_loss(preds, scene.fields, model.symmetry, cfg.loss_config())
    except ValueError:
        return None


def process_scene(cfg: ExperimentConfig, index: int) -> dict:
    """Generate, corrupt, vote, solve and score one scene."""
    seed = scene_seed(cfg.seed, index)
    geom_rng, noise_rng, angle_rng, vote_seed, dir_seed = _streams(seed)
    scfg = cfg.scene_config()
    noise = cfg.noise_model()
    model = scfg.stick.model()
    intr = scfg.intrinsics
    scene = make_stick_scene(scfg, geom_rng)

    region = scene.mask
    occ_r = 0.0
    if cfg.occlusion:
        occ_r = noise.occluder_radius_for(scene)
        if occ_r > 0:
            region = occlude_keypoints(scene.mask, scene.keypoints2d, occ_r)

    preds = [corrupt_field(f, noise, noise_rng, cfg.loss_config(), support=scene.mask)
             for f in scene.fields]
    dir_preds = []
    if "direction" in cfg.schemes:
        for k, kp in enumerate(scene.keypoints2d):
            dfield = build_direction_field(kp, intr.height, intr.width, k)
            dir_preds.append(corrupt_direction_field(dfield, noise, angle_rng, support=scene.mask))

    record = {
        "index": index,
        "seed": seed,
        "gt_pose": scene.pose.to_dict(),
        "gt_keypoints": scene.keypoints2d.tolist(),
        "projected_length": scene.projected_length,
        "occluder_radius": occ_r,
        "region_pixels": int(np.count_nonzero(region)),
        "kdf_loss": _scene_loss(preds, scene, model, cfg),
    }
    vcfg = cfg.voting_config(vote_seed)
    dcfg = cfg.voting_config(dir_seed)
    for scheme, fields, voter, vc in (("distance", preds, vote_keypoint, vcfg),
                                      ("direction", dir_preds, direction_vote_keypoint, dcfg)):
        if scheme not in cfg.schemes:
            continue
        votes = []
        try:
            for k, f in enumerate(fields):
                reg = region
                if cfg.voter_radius is not None:
                    reg = region & (scene.fields[k].values <= cfg.voter_radius)
                votes.append(voter(f, reg, vc))
        except (KDFError, ValueError) as exc:
            record[scheme] = _failed_record(scheme, exc, len(votes))
            continue
        record[scheme] = _scheme_record(votes, scene, model, cfg)
    return record


def _inf_if_none(x):
    return np.inf if x is None else x


def summarize(records: list[dict], cfg: ExperimentConfig) -> list[tuple[str, str, float]]:
    """Aggregate metrics recomputed purely from per-scene records."""
    th = cfg.thresholds()
    diameter = cfg.stick_length
    rows = []
    for scheme in (s for s in SCHEMES if s in cfg.schemes):
        recs = [r[scheme] for r in records]
        proj = [_inf_if_none(r["proj2d"]) for r in recs]
        pdist = [_inf_if_none(r["pose_distance"]) for r in recs]
        kerr = [e for r in recs for e in (r["keypoint_errors"] or [np.inf] * cfg.num_keypoints)]
        vals = {
            "proj2d_acc_toy": accuracy(proj, th.toy_proj_pixels),
            "proj2d_acc": accuracy(proj, th.proj_pixels),
            "adds_acc": accuracy(pdist, th.add_fraction * diameter),
            "adds_auc": auc(pdist, th.auc_max),
            "kp_acc_1px": accuracy(kerr, th.toy_proj_pixels),
            "kp_err_median": float(np.median(kerr)),
            "failures": float(sum(r["status"] != "ok" for r in recs)),
        }
        rows.extend((scheme, m, vals[m]) for m in METRICS)
    return rows


@dataclass
class Report:
    config: ExperimentConfig
    records: list
    summary: list

    def metric(self, scheme: str, name: str) -> float:
        for s, m, v in self.summary:
            if s == scheme and m == name:
                return v
        raise KeyError((scheme, name))

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scheme", "metric", "value"])
        for s, m, v in self.summary:
            w.writerow([s, m, repr(float(v))])
        return buf.getvalue()

    def records_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "summary.csv").write_text(self.summary_csv())
            (out / "scenes.jsonl").write_text(self.records_jsonl())
            (out / "config.json").write_text(json.dumps(self.config.to_dict(), indent=1,
                                                        sort_keys=True) + "\n")
        except OSError as exc:
            raise OSError(exc.errno, f"cannot write report to {out}: {exc.strerror}") from exc


def _run_records(cfg: ExperimentConfig) -> list[dict]:
    indices = range(cfg.scenes)
    if cfg.workers == 1:
        return [process_scene(cfg, i) for i in indices]
    with ProcessPoolExecutor(cfg.workers) as pool:
        # map preserves scene order regardless of completion order
        return list(pool.map(process_scene, [cfg] * cfg.scenes, indices,
                             chunksize=max(1, cfg.scenes // (4 * cfg.workers))))


def run_experiment(cfg: ExperimentConfig) -> Report:
    log.info("running %d scenes (seed %d)", cfg.scenes, cfg.seed)
    records = _run_records(cfg)
    return Report(cfg, records, summarize(records, cfg))


@dataclass
class SweepResult:
    axis: str
    values: tuple
    reports: list

    def rows(self):
        for value, rep in zip(self.values, self.reports):
            for scheme, metric, result in rep.summary:
                yield value, f"{scheme}.{metric}", result

    def csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["axis", "value", "metric", "result"])
        for value, metric, result in self.rows():
            w.writerow([self.axis, value, metric, repr(float(result))])
        return buf.getvalue()

    def metric(self, scheme: str, name: str) -> list[float]:
        return [rep.metric(scheme, name) for rep in self.reports]

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / f"sweep_{self.axis}.csv").write_text(self.csv())
        except OSError as exc:
            raise OSError(exc.errno, f"cannot write sweep to {out}: {exc.strerror}") from exc


def sweep(cfg: ExperimentConfig, axis: str | None = None, values=None) -> SweepResult:
    """One experiment per grid value, all sharing the master seed."""
    axis = axis or cfg.axis
    values = tuple(values if values is not None else cfg.values)
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    if not values:
        raise ConfigError("sweep values must be non-empty")
    reports = [run_experiment(cfg.with_axis_value(axis, v)) for v in values]
    return SweepResult(axis, values, reports)


def time_voting(cfg: ExperimentConfig, repetitions: int | None = None) -> dict:
    """Median wall-clock time of one distance-voting call at the configured operating point."""
    reps = max(1, cfg.timing_repetitions if repetitions is None else int(repetitions))
    rng = np.random.default_rng(cfg.seed)
    intr = cfg.intrinsics()
    kp = (intr.width * 0.4, intr.height * 0.6)
    gt = build_kdf(kp, intr.height, intr.width)
    field = corrupt_field(gt, cfg.noise_model(), rng, cfg.loss_config())
    vcfg = VotingConfig(cfg.num_voters, cfg.num_triples, cfg.theta, cfg.seed)
    vote_keypoint(field, None, vcfg)  # compile / warm caches
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        vote_keypoint(field, None, vcfg)
        times.append((time.perf_counter() - t0) * 1e3)
    return {
        "median_ms": statistics.median(times),
        "min_ms": min(times),
        "max_ms": max(times),
        "repetitions": reps,
        "num_voters": cfg.num_voters,
        "num_hypotheses": 3 * cfg.num_triples,
    }


def generate_archive(cfg: ExperimentConfig, out_dir) -> list[Path]:
    """Write each scene (JSON + ground-truth and predicted field files) to ``out_dir``."""
    paths = []
    for i in range(cfg.scenes):
        seed = scene_seed(cfg.seed, i)
        geom_rng, noise_rng, _, _, _ = _streams(seed)
        scfg = cfg.scene_config()
        scene = make_stick_scene(scfg, geom_rng)
        noise = cfg.noise_model()
        preds = [corrupt_field(f, noise, noise_rng, cfg.loss_config(), support=scene.mask)
                 for f in scene.fields]
        paths.append(write_scene(out_dir, i, seed, scene, scfg.intrinsics, preds))
    return paths
