"""Exception types raised across the package."""

from __future__ import annotations


class KDFError(Exception):
    """Base class for all package errors."""


class BehindCameraError(KDFError, ValueError):
    """A point has non-positive depth in the camera frame."""


class DegenerateConfigurationError(KDFError, ValueError):
    """Input geometry admits no unique solution (coincident, collinear, ...)."""


class NonConvergenceError(KDFError, RuntimeError):
    """Iterative refinement hit its iteration cap.

    The best iterate seen is kept on ``pose`` so callers may still use it.
    """

    def __init__(self, message: str, pose=None, rmse: float | None = None):
        super().__init__(message)
        self.pose = pose
        self.rmse = rmse


class ConfigError(KDFError, ValueError):
    """Invalid experiment configuration."""
