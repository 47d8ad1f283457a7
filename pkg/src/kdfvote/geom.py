"""Rigid poses, pinhole projection, object models and keypoint selection."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import BehindCameraError


def _frozen(a, shape=None) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    if shape is not None:
        arr = arr.reshape(shape)
    arr.setflags(write=False)
    return arr


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Project a 3x3 matrix onto SO(3) (closest rotation in Frobenius norm)."""
    U, _, Vt = np.linalg.svd(np.asarray(R, dtype=np.float64))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def skew(w) -> np.ndarray:
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def so3_exp(w) -> np.ndarray:
    """Rodrigues formula for a rotation vector."""
    w = np.asarray(w, dtype=np.float64)
    theta = float(np.linalg.norm(w))
    K = skew(w)
    if theta < 1e-8:
        return np.eye(3) + K + 0.5 * K @ K
    return np.eye(3) + np.sin(theta) / theta * K + (1 - np.cos(theta)) / theta**2 * K @ K


def rotation_between(a, b) -> np.ndarray:
    """Smallest rotation taking unit vector ``a`` onto unit vector ``b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    a = a / np.linalg.norm(a)
    b = b / np.linalg.norm(b)
    v = np.cross(a, b)
    c = float(a @ b)
    s = float(np.linalg.norm(v))
    if s < 1e-12:
        if c > 0:
            return np.eye(3)
        # antiparallel: rotate by pi about any axis orthogonal to a
        helper = np.eye(3)[int(np.argmin(np.abs(a)))]
        axis = np.cross(a, helper)
        axis /= np.linalg.norm(axis)
        return 2.0 * np.outer(axis, axis) - np.eye(3)
    return so3_exp(v / s * np.arctan2(s, c))


def rotation_angle(R1: np.ndarray, R2: np.ndarray) -> float:
    """Geodesic distance between two rotations, in radians.

    Uses the chord length so that tiny angles stay accurate (arccos of the
    trace loses half the significant digits near zero).
    """
    chord = np.linalg.norm(np.asarray(R1) - np.asarray(R2))
    return float(2.0 * np.arcsin(min(1.0, chord / (2.0 * np.sqrt(2.0)))))


@dataclass(frozen=True)
class Pose:
    """Rigid transform x -> R @ x + t from the model frame to the camera frame."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", _frozen(self.rotation, (3, 3)))
        object.__setattr__(self, "translation", _frozen(self.translation, (3,)))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, M) -> "Pose":
        M = np.asarray(M, dtype=np.float64)
        return cls(M[:3, :3], M[:3, 3])

    def as_matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def compose(self, other: "Pose") -> "Pose":
        """``self ∘ other``: apply ``other`` first."""
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def apply(self, points) -> np.ndarray:
        return transform_points(points, self)

    def to_dict(self) -> dict:
        return {
            "rotation": [float(x) for x in self.rotation.ravel()],
            "translation": [float(x) for x in self.translation],
        }

    @classmethod
    def from_dict(cls, d: dict, repair: bool = True) -> "Pose":
        R = np.asarray(d["rotation"], dtype=np.float64).reshape(3, 3)
        if repair:
            R = orthonormalize(R)
        return cls(R, d["translation"])


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    height: int
    width: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.height < 1 or self.width < 1:
            raise ValueError("image size must be at least 1x1")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def diagonal(self) -> float:
        return float(np.hypot(self.height, self.width))

    def to_dict(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "height": self.height, "width": self.width,
        }


def project_camera_points(Xc, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Pinhole projection of points already expressed in the camera frame."""
    Xc = np.asarray(Xc, dtype=np.float64)
    z = Xc[..., 2]
    if np.any(z <= 0):
        raise BehindCameraError("point has non-positive depth in the camera frame")
    u = intrinsics.fx * Xc[..., 0] / z + intrinsics.cx
    v = intrinsics.fy * Xc[..., 1] / z + intrinsics.cy
    return np.stack([u, v], axis=-1)


def project(point, pose: Pose, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Project model-frame point(s) through ``pose`` into pixel coordinates (u, v).

    Accepts a single 3-vector or an (N, 3) array. The result may fall outside
    the image.
    """
    return project_camera_points(transform_points(point, pose), intrinsics)


def transform_points(points, pose: Pose) -> np.ndarray:
    P = np.asarray(points, dtype=np.float64)
    return P @ pose.rotation.T + pose.translation


def farthest_point_sample(points, count: int, seed_index: int | None = None) -> np.ndarray:
    """Greedy farthest point sampling.

    The first pick is ``seed_index`` when given, otherwise the point farthest
    from the centroid (lowest index on ties). Every later pick maximizes the
    minimum distance to the points already chosen. Returns the selected
    points in selection order.
    """
    return np.asarray(points, dtype=np.float64)[fps_indices(points, count, seed_index)]


def fps_indices(points, count: int, seed_index: int | None = None) -> np.ndarray:
    P = np.asarray(points, dtype=np.float64)
    n = len(P)
    if n == 0:
        raise ValueError("cannot sample from an empty point set")
    if count > n:
        raise ValueError(f"requested {count} samples from {n} points")
    if count <= 0:
        return np.zeros(0, dtype=np.int64)
    if seed_index is None:
        seed_index = int(np.argmax(np.linalg.norm(P - P.mean(axis=0), axis=1)))
    chosen = [seed_index]
    mind = np.linalg.norm(P - P[seed_index], axis=1)
    mind[seed_index] = -1.0
    for _ in range(count - 1):
        nxt = int(np.argmax(mind))
        chosen.append(nxt)
        mind = np.minimum(mind, np.linalg.norm(P - P[nxt], axis=1))
        mind[chosen] = -1.0
    return np.asarray(chosen, dtype=np.int64)


def max_pairwise_distance(points) -> float:
    P = np.asarray(points, dtype=np.float64)
    best = 0.0
    # row blocks keep memory bounded for ~10k points
    for i in range(0, len(P), 1024):
        block = P[i:i + 1024]
        d2 = ((block[:, None, :] - P[None, :, :]) ** 2).sum(-1)
        best = max(best, float(d2.max()))
    return float(np.sqrt(best))


@dataclass(frozen=True)
class SymmetryGroup:
    """Discrete keypoint permutations plus an optional continuous rotation axis.

    ``permutations`` are 0-based index tuples over the symmetric keypoint
    subset; the identity is inserted when missing. ``axis`` is a
    ``(point, direction)`` pair in the model frame.
    """

    permutations: tuple = ()
    axis: tuple | None = None

    def __post_init__(self):
        perms = [tuple(int(i) for i in p) for p in self.permutations]
        size = len(perms[0]) if perms else 0
        for p in perms:
            if len(p) != size or sorted(p) != list(range(size)):
                raise ValueError(f"{p} is not a permutation of 0..{size - 1}")
        ident = tuple(range(size))
        if ident not in perms:
            perms.insert(0, ident)
        object.__setattr__(self, "permutations", tuple(perms))
        if self.axis is not None:
            point, direction = self.axis
            d = np.asarray(direction, dtype=np.float64)
            d = d / np.linalg.norm(d)
            object.__setattr__(self, "axis", (_frozen(point, (3,)), _frozen(d, (3,))))

    @property
    def size(self) -> int:
        return len(self.permutations[0])

    @property
    def is_trivial(self) -> bool:
        return self.axis is None and len(self.permutations) <= 1

    def to_dict(self) -> dict:
        axis = None
        if self.axis is not None:
            axis = {"point": [float(x) for x in self.axis[0]],
                    "direction": [float(x) for x in self.axis[1]]}
        return {"permutations": [list(p) for p in self.permutations], "axis": axis}

    @classmethod
    def from_dict(cls, d: dict | None) -> "SymmetryGroup":
        if not d:
            return cls()
        axis = d.get("axis")
        if axis is not None:
            axis = (axis["point"], axis["direction"])
        return cls(tuple(tuple(p) for p in d.get("permutations", ())), axis)


@dataclass(frozen=True)
class ObjectModel:
    points: np.ndarray
    keypoints: np.ndarray
    diameter: float | None = None
    symmetry: SymmetryGroup = field(default_factory=SymmetryGroup)

    def __post_init__(self):
        pts = _frozen(self.points).reshape(-1, 3)
        kps = _frozen(self.keypoints).reshape(-1, 3)
        if len(pts) == 0:
            raise ValueError("model has no points")
        if len(kps) < 4:
            raise ValueError("an object model needs at least 4 keypoints")
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        tol = 1e-9 * max(1.0, float(np.abs(pts).max()))
        if np.any(kps < lo - tol) or np.any(kps > hi + tol):
            raise ValueError("keypoints must lie inside the bounding box of the model points")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "keypoints", kps)
        if self.diameter is None:
            object.__setattr__(self, "diameter", max_pairwise_distance(pts))

    @property
    def num_keypoints(self) -> int:
        return len(self.keypoints)

    def to_dict(self) -> dict:
        return {
            "points": [float(x) for x in self.points.ravel()],
            "keypoints": [float(x) for x in self.keypoints.ravel()],
            "diameter": float(self.diameter),
            "symmetry": self.symmetry.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ObjectModel":
        return cls(
            points=np.asarray(d["points"], dtype=np.float64).reshape(-1, 3),
            keypoints=np.asarray(d["keypoints"], dtype=np.float64).reshape(-1, 3),
            diameter=d.get("diameter"),
            symmetry=SymmetryGroup.from_dict(d.get("symmetry")),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "ObjectModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def model_with_fps_keypoints(points: Sequence, count: int,
                             symmetry: SymmetryGroup | None = None) -> ObjectModel:
    """Build an :class:`ObjectModel` whose keypoints are FPS samples of its points."""
    pts = np.asarray(points, dtype=np.float64)
    return ObjectModel(pts, farthest_point_sample(pts, count),
                       symmetry=symmetry or SymmetryGroup())
