"""Keypoint distance fields: construction, log parameterization, losses, file I/O.

Field values are indexed ``values[v, u]`` (row = v, column = u) so that a
pixel's image coordinates are ``(u, v)`` and storage is row-major.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from .geom import SymmetryGroup

MAGIC = b"KDF1"
_HEADER = struct.Struct("<4sIII")

# Distances below this are clamped before taking the log.
MIN_DISTANCE = 0.5


def default_r(height: int, width: int) -> float:
    """Parameterization constant for an image of the given size.

    16 px for 256x256 inputs; otherwise the geometric mean of the smallest
    (half a pixel) and largest (image diagonal) distances.
    """
    if (height, width) == (256, 256):
        return 16.0
    return math.sqrt(MIN_DISTANCE * math.hypot(height, width))


@dataclass(frozen=True)
class LossConfig:
    r: float = 16.0
    e: float = 1.0
    crop_radius: float | None = 64.0

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError("r must be positive")
        if not self.e > 0:
            raise ValueError("e must be positive")
        if self.crop_radius is not None and not self.crop_radius > 0:
            raise ValueError("crop_radius must be positive or None")


@dataclass(frozen=True)
class DistanceField:
    values: np.ndarray
    keypoint_index: int = 0

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64)
        if vals.ndim != 2:
            raise ValueError("distance field must be a 2D grid")
        if np.any(vals < 0):
            raise ValueError("distance field values must be non-negative")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def at(self, u: int, v: int) -> float:
        return float(self.values[v, u])

    def replace(self, values) -> "DistanceField":
        return DistanceField(values, self.keypoint_index)


@lru_cache(maxsize=8)
def pixel_grid(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Column (u) and row (v) coordinate grids of shape (H, W); read-only."""
    v, u = np.mgrid[0:height, 0:width]
    u, v = u.astype(np.float64), v.astype(np.float64)
    u.setflags(write=False)
    v.setflags(write=False)
    return u, v


def build_kdf(keypoint, height: int, width: int, keypoint_index: int = 0) -> DistanceField:
    """Exact distance from every pixel to ``keypoint`` (which may lie off-image)."""
    if height < 1 or width < 1:
        raise ValueError("field size must be at least 1x1")
    ku, kv = float(keypoint[0]), float(keypoint[1])
    u, v = pixel_grid(height, width)
    return DistanceField(np.hypot(u - ku, v - kv), keypoint_index)


def to_log_param(D, config: LossConfig):
    """log(D / r), with D clamped to at least half a pixel.

    Only a zero distance (the keypoint pixel itself) is clamped; negative or
    NaN distances are rejected.
    """
    D = np.asarray(D, dtype=np.float64)
    if not np.all(D >= 0):
        raise ValueError("distances must be non-negative")
    D = np.maximum(D, MIN_DISTANCE)
    t = np.log(D / config.r)
    return float(t) if t.ndim == 0 else t


def from_log_param(t, config: LossConfig):
    D = config.r * np.exp(np.asarray(t, dtype=np.float64))
    return float(D) if D.ndim == 0 else D


def smooth_l1(d, e: float) -> np.ndarray:
    a = np.abs(np.asarray(d, dtype=np.float64))
    return np.where(a < e, 0.5 * a * a / e, a - 0.5 * e)


def loss_support(gt: DistanceField, config: LossConfig) -> np.ndarray:
    if config.crop_radius is None:
        return np.ones(gt.shape, dtype=bool)
    return gt.values <= config.crop_radius


def kdf_loss(pred: DistanceField, gt: DistanceField, config: LossConfig) -> float:
    """Mean smooth-L1 between log-parameterized predicted and true distances.

    Only pixels whose true distance is within ``config.crop_radius`` count.
    """
    if pred.shape != gt.shape:
        raise ValueError(f"field shapes differ: {pred.shape} vs {gt.shape}")
    support = loss_support(gt, config)
    if not support.any():
        raise ValueError("loss support is empty")
    d = to_log_param(gt.values[support], config) - to_log_param(pred.values[support], config)
    return float(smooth_l1(d, config.e).mean())


def symmetric_kdf_loss(preds: Sequence[DistanceField], gts: Sequence[DistanceField],
                       symmetry: SymmetryGroup, config: LossConfig) -> float:
    """Summed per-keypoint loss, minimized over the symmetry permutations.

    Under permutation ``s`` prediction ``k`` is compared with ground truth
    ``s[k]``.
    """
    if len(preds) != len(gts):
        raise ValueError("preds and gts must have the same length")
    n = len(preds)
    perms = symmetry.permutations if symmetry.size else (tuple(range(n)),)
    # pairwise table so each (pred, gt) loss is evaluated once
    cache: dict[tuple[int, int], float] = {}
    best = math.inf
    for perm in perms:
        if len(perm) != n:
            raise IndexError(f"permutation {perm} does not cover {n} keypoints")
        total = 0.0
        for k, s in enumerate(perm):
            if not 0 <= s < n:
                raise IndexError(f"permutation index {s} out of range")
            if (k, s) not in cache:
                cache[(k, s)] = kdf_loss(preds[k], gts[s], config)
            total += cache[(k, s)]
        best = min(best, total)
    return best


def write_field(field: DistanceField, path) -> None:
    """Write ``field`` as a little-endian float32 ``KDF1`` file."""
    Path(path).write_bytes(field_to_bytes(field))


def field_to_bytes(field: DistanceField) -> bytes:
    H, W = field.shape
    header = _HEADER.pack(MAGIC, H, W, field.keypoint_index)
    return header + np.ascontiguousarray(field.values, dtype="<f4").tobytes()


def field_from_bytes(data: bytes) -> DistanceField:
    if len(data) < _HEADER.size:
        raise ValueError("truncated field file header")
    magic, H, W, k = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    expected = _HEADER.size + 4 * H * W
    if len(data) != expected:
        raise ValueError(f"field file has {len(data)} bytes, expected {expected}")
    vals = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(H, W)
    return DistanceField(vals.astype(np.float64), int(k))


def read_field(path) -> DistanceField:
    path = Path(path)
    try:
        return field_from_bytes(path.read_bytes())
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from exc
