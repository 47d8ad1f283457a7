"""Keypoint distance fields and distance-based RANSAC keypoint voting for 6D pose."""

from .geom import CameraIntrinsics, ObjectModel, Pose, SymmetryGroup, project, transform_points
from .kdf import DistanceField, LossConfig, build_kdf, kdf_loss, symmetric_kdf_loss
from .voting import Hypothesis, VoterSet, VotingConfig, vote_keypoint

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics", "ObjectModel", "Pose", "SymmetryGroup", "project", "transform_points",
    "DistanceField", "LossConfig", "build_kdf", "kdf_loss", "symmetric_kdf_loss",
    "Hypothesis", "VoterSet", "VotingConfig", "vote_keypoint",
]
