"""Pose accuracy metrics: ADD, ADD-S, 2D projection error, thresholded accuracy, AUC."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geom import CameraIntrinsics, ObjectModel, Pose, project, transform_points

# ADD-S uses the exact all-pairs minimum up to this many points, a KD-tree above.
EXACT_NN_LIMIT = 2000


@dataclass(frozen=True)
class EvalThresholds:
    add_fraction: float = 0.1
    proj_pixels: float = 5.0
    toy_proj_pixels: float = 1.0
    auc_max: float = 0.10

    def __post_init__(self):
        for name in ("add_fraction", "proj_pixels", "toy_proj_pixels", "auc_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


def _points(model) -> np.ndarray:
    pts = model.points if isinstance(model, ObjectModel) else np.asarray(model, dtype=np.float64)
    if len(pts) == 0:
        raise ValueError("model has no points")
    return pts


def add_distance(pose: Pose, gt_pose: Pose, model) -> float:
    """Mean distance between corresponding model points under the two poses."""
    pts = _points(model)
    diff = transform_points(pts, pose) - transform_points(pts, gt_pose)
    return float(np.mean(np.sqrt(np.sum(diff * diff, axis=1))))


def adds_distance(pose: Pose, gt_pose: Pose, model) -> float:
    """Mean distance from each predicted model point to the nearest ground-truth point."""
    pts = _points(model)
    a = transform_points(pts, pose)
    b = transform_points(pts, gt_pose)
    if len(pts) <= EXACT_NN_LIMIT:
        diff = a[:, None, :] - b[None, :, :]
        return float(np.mean(np.sqrt(np.sum(diff * diff, axis=2)).min(axis=1)))
    d, _ = cKDTree(b).query(a)
    return float(np.mean(d))


def proj2d_distance(pose: Pose, gt_pose: Pose, model, intrinsics: CameraIntrinsics) -> float:
    pts = _points(model)
    diff = project(pts, pose, intrinsics) - project(pts, gt_pose, intrinsics)
    return float(np.mean(np.sqrt(np.sum(diff * diff, axis=1))))


def pose_distance(pose: Pose, gt_pose: Pose, model: ObjectModel) -> float:
    """ADD for asymmetric models, ADD-S when the model has any symmetry."""
    if model.symmetry.is_trivial:
        return add_distance(pose, gt_pose, model)
    return adds_distance(pose, gt_pose, model)


def accuracy(distances, threshold: float) -> float:
    """Fraction of distances strictly below ``threshold``; non-finite counts as a miss."""
    d = np.asarray(distances, dtype=np.float64)
    if d.size == 0:
        raise ValueError("no distances")
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    return float(np.count_nonzero(d < threshold) / d.size)


def auc(distances, max_threshold: float) -> float:
    """Normalized area under the accuracy-vs-threshold curve on [0, max_threshold].

    accuracy(t) is a step function that gains 1/n just after each distance,
    so each distance d contributes (max - d)/max / n when d < max.
    """
    d = np.asarray(distances, dtype=np.float64)
    if d.size == 0:
        raise ValueError("no distances")
    if not max_threshold > 0:
        raise ValueError("max_threshold must be positive")
    d = np.where(np.isfinite(d), d, np.inf)
    contrib = np.clip((max_threshold - d) / max_threshold, 0.0, 1.0)
    return float(np.sum(contrib) / d.size)
