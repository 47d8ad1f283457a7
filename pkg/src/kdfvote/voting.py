"""RANSAC keypoint voting on distance fields, plus the direction-field baseline.

Distance voting: every sampled triple of voter pixels gives three circles
(centre = pixel, radius = predicted distance). Each pair of circles meets in
up to two points; the third circle picks the one it passes closest to. The
candidate with the most voters whose predicted distance agrees within
``inlier_threshold`` wins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from . import _kernels
from .errors import DegenerateConfigurationError
from .kdf import DistanceField, pixel_grid

# discriminant values down to -TANGENT_TOL are treated as tangency
TANGENT_TOL = 1e-9
COINCIDENT_TOL = 1e-12

Region = Union[np.ndarray, Callable[[np.ndarray, np.ndarray], np.ndarray], None]


@dataclass(frozen=True)
class VotingConfig:
    num_voters: int = 4096
    num_triples: int = 1024
    inlier_threshold: float = 0.4
    rng_seed: int = 0
    direction_cos_threshold: float = 0.99
    direction_max_condition: float = 1e4

    def __post_init__(self):
        if self.num_voters < 3:
            raise ValueError("num_voters must be at least 3")
        if self.num_triples < 1:
            raise ValueError("num_triples must be at least 1")
        if not self.inlier_threshold > 0:
            raise ValueError("inlier_threshold must be positive")
        if not 0 < self.direction_cos_threshold < 1:
            raise ValueError("direction_cos_threshold must be in (0, 1)")
        if not 0 <= self.rng_seed < 2**64:
            raise ValueError("rng_seed must be an unsigned 64-bit integer")

    @property
    def num_hypotheses(self) -> int:
        return 3 * self.num_triples

    def keypoint_seed(self, keypoint_index: int) -> int:
        """Per-keypoint stream seed; identical whether keypoints run serially or not."""
        return self.rng_seed ^ int(keypoint_index)


@dataclass(frozen=True)
class Hypothesis:
    location: np.ndarray
    score: int = 0
    reliable: bool = True

    def __post_init__(self):
        object.__setattr__(self, "location", np.asarray(self.location, dtype=np.float64))


@dataclass(frozen=True)
class VoterSet:
    pixels: np.ndarray
    distances: np.ndarray

    def __post_init__(self):
        px = np.ascontiguousarray(self.pixels, dtype=np.float64).reshape(-1, 2)
        d = np.ascontiguousarray(self.distances, dtype=np.float64).ravel()
        if len(px) != len(d):
            raise ValueError("pixels and distances differ in length")
        if np.any(d < 0):
            raise ValueError("voter distances must be non-negative")
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "distances", d)

    def __len__(self) -> int:
        return len(self.distances)


@dataclass(frozen=True)
class DirectionField:
    """Per-pixel unit vectors pointing at a keypoint; shape (H, W, 2) as (du, dv)."""

    values: np.ndarray
    keypoint_index: int = 0

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64)
        if vals.ndim != 3 or vals.shape[2] != 2:
            raise ValueError("direction field must have shape (H, W, 2)")
        sq = vals[..., 0] ** 2 + vals[..., 1] ** 2
        # |n - 1| <= 1e-6  <=>  |n^2 - 1| <~ 2e-6
        if np.any((sq != 0) & (np.abs(sq - 1) > 2e-6)):
            raise ValueError("direction vectors must be unit length (or the zero sentinel)")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[:2]


# -- circle geometry ---------------------------------------------------------

def circle_intersections(c1, r1: float, c2, r2: float) -> list[np.ndarray]:
    """Points on both circles: two when they cross, one when tangent, else none.

    With ``e`` the unit vector from ``c1`` to ``c2`` and ``n = (-e_v, e_u)``,
    the first returned point is on the ``+n`` side.
    """
    if not (r1 > 0 and r2 > 0):
        raise ValueError("radii must be positive")
    c1 = np.asarray(c1, dtype=np.float64)
    c2 = np.asarray(c2, dtype=np.float64)
    delta = c2 - c1
    d = math.hypot(delta[0], delta[1])
    if d < COINCIDENT_TOL:
        raise DegenerateConfigurationError("circle centres coincide")
    a = (r1 * r1 - r2 * r2 + d * d) / (2.0 * d)
    h2 = r1 * r1 - a * a
    if h2 < -TANGENT_TOL:
        return []
    e = delta / d
    base = c1 + a * e
    if h2 <= 0.0:
        return [base]
    h = math.sqrt(h2)
    n = np.array([-e[1], e[0]])
    return [base + h * n, base - h * n]


def select_valid_hypothesis(candidates, c3, r3: float) -> np.ndarray:
    """Candidate closest to lying on the third circle; the first one wins ties."""
    if len(candidates) == 0:
        raise DegenerateConfigurationError("no candidate hypotheses")
    c3 = np.asarray(c3, dtype=np.float64)
    best, best_res = None, math.inf
    for h in candidates:
        h = np.asarray(h, dtype=np.float64)
        res = abs(math.hypot(*(h - c3)) - r3)
        if res < best_res:
            best, best_res = h, res
    return best


def _pair_hypotheses(c1, r1, c2, r2, c3, r3):
    """Vectorized pair intersection + third-circle disambiguation.

    Same arithmetic as :func:`circle_intersections` and
    :func:`select_valid_hypothesis`. Returns (points, valid).
    """
    delta = c2 - c1
    d = np.hypot(delta[:, 0], delta[:, 1])
    ok = d >= COINCIDENT_TOL
    d_safe = np.where(ok, d, 1.0)
    a = (r1 * r1 - r2 * r2 + d_safe * d_safe) / (2.0 * d_safe)
    h2 = r1 * r1 - a * a
    ok &= h2 >= -TANGENT_TOL
    h = np.sqrt(np.maximum(h2, 0.0))
    e = delta / d_safe[:, None]
    base = c1 + a[:, None] * e
    n = np.stack([-e[:, 1], e[:, 0]], axis=1)
    p1 = base + h[:, None] * n
    p2 = base - h[:, None] * n
    res1 = np.abs(np.hypot(p1[:, 0] - c3[:, 0], p1[:, 1] - c3[:, 1]) - r3)
    res2 = np.abs(np.hypot(p2[:, 0] - c3[:, 0], p2[:, 1] - c3[:, 1]) - r3)
    pts = np.where((res2 < res1)[:, None], p2, p1)
    return pts, ok


def sample_triples(n: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` triples of distinct indices in [0, n); triples may repeat."""
    if n < 3:
        raise ValueError("need at least 3 voters to sample a triple")
    i1 = rng.integers(0, n, count)
    i2 = rng.integers(0, n - 1, count)
    i2 += i2 >= i1
    lo, hi = np.minimum(i1, i2), np.maximum(i1, i2)
    i3 = rng.integers(0, n - 2, count)
    i3 += i3 >= lo
    i3 += i3 >= hi
    return np.stack([i1, i2, i3], axis=1)


def generate_hypotheses(voters: VoterSet, config: VotingConfig,
                        rng: np.random.Generator | None = None) -> np.ndarray:
    """Candidate keypoint locations from ``config.num_triples`` random voter triples.

    Returns an (M, 2) array, M <= 3 * num_triples, in generation order: for
    each triple the (1,2), (2,3), (3,1) circle pairs. Pairs whose circles do
    not meet are skipped.
    """
    if len(voters) < 3:
        raise ValueError(f"need at least 3 voters, got {len(voters)}")
    if rng is None:
        rng = np.random.default_rng(config.rng_seed)
    tri = sample_triples(len(voters), config.num_triples, rng)
    P, D = voters.pixels, voters.distances
    # rows ordered triple-major: (t0: 12, 23, 31), (t1: ...)
    a = tri.ravel()
    b = tri[:, [1, 2, 0]].ravel()
    c = tri[:, [2, 0, 1]].ravel()
    pts, ok = _pair_hypotheses(P[a], D[a], P[b], D[b], P[c], D[c])
    return pts[ok]


def vote_score(h, voters: VoterSet, theta: float) -> int:
    """Number of voters whose predicted distance is within ``theta`` of their distance to ``h``."""
    return int(vote_scores(np.asarray(h, dtype=np.float64).reshape(1, 2), voters, theta)[0])


def vote_scores(hypotheses: np.ndarray, voters: VoterSet, theta: float) -> np.ndarray:
    if not theta > 0:
        raise ValueError("theta must be positive")
    H = np.ascontiguousarray(hypotheses, dtype=np.float64).reshape(-1, 2)
    return _kernels.distance_scores(
        np.ascontiguousarray(H[:, 0]), np.ascontiguousarray(H[:, 1]),
        np.ascontiguousarray(voters.pixels[:, 0]), np.ascontiguousarray(voters.pixels[:, 1]),
        voters.distances, float(theta),
    )


# -- voter selection ---------------------------------------------------------

def region_pixels(region: Region, height: int, width: int) -> np.ndarray:
    """(N, 2) array of (u, v) pixel coordinates selected by ``region``, row-major.

    ``region`` is a boolean (H, W) mask, a predicate ``f(u, v) -> bool array``
    evaluated over the pixel grid, or None for the whole image.
    """
    if region is None:
        mask = np.ones((height, width), dtype=bool)
    elif callable(region):
        u, v = pixel_grid(height, width)
        mask = np.asarray(region(u, v), dtype=bool)
    else:
        mask = np.asarray(region, dtype=bool)
    if mask.shape != (height, width):
        raise ValueError(f"region shape {mask.shape} does not match field {(height, width)}")
    vs, us = np.nonzero(mask)
    return np.stack([us, vs], axis=1).astype(np.float64)


def _sample_indices(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    if n <= k:
        return np.arange(n)
    return rng.choice(n, k, replace=False)


def sample_voters(field: DistanceField, region: Region, num_voters: int,
                  rng: np.random.Generator) -> VoterSet:
    pix = region_pixels(region, *field.shape)
    idx = _sample_indices(len(pix), num_voters, rng)
    pix = pix[idx]
    iu, iv = pix[:, 0].astype(np.intp), pix[:, 1].astype(np.intp)
    return VoterSet(pix, field.values[iv, iu])


def vote_keypoint(field: DistanceField, voter_region: Region,
                  config: VotingConfig = VotingConfig()) -> Hypothesis:
    """Localize one keypoint from its (predicted) distance field.

    Samples up to ``num_voters`` pixels of ``voter_region`` without
    replacement, builds ``3 * num_triples`` hypotheses and returns the best
    scored one (earliest generated on ties).
    """
    rng = np.random.default_rng(config.keypoint_seed(field.keypoint_index))
    voters = sample_voters(field, voter_region, config.num_voters, rng)
    if len(voters) < 3:
        raise ValueError(f"voter region has {len(voters)} pixels, need at least 3")
    hyps = generate_hypotheses(voters, config, rng)
    if len(hyps) == 0:
        centroid = voters.pixels.mean(axis=0)
        return Hypothesis(centroid, vote_score(centroid, voters, config.inlier_threshold),
                          reliable=False)
    scores = vote_scores(hyps, voters, config.inlier_threshold)
    best = int(np.argmax(scores))
    return Hypothesis(hyps[best], int(scores[best]))


# -- direction baseline ------------------------------------------------------

def build_direction_field(keypoint, height: int, width: int,
                          keypoint_index: int = 0) -> DirectionField:
    """Unit vectors from each pixel toward ``keypoint``; (0, 0) on the keypoint itself."""
    if height < 1 or width < 1:
        raise ValueError("field size must be at least 1x1")
    u, v = pixel_grid(height, width)
    du = float(keypoint[0]) - u
    dv = float(keypoint[1]) - v
    r = np.hypot(du, dv)
    safe = np.where(r > 0, r, 1.0)
    vals = np.stack([du / safe, dv / safe], axis=-1)
    vals[r == 0] = 0.0
    return DirectionField(vals, keypoint_index)


def direction_vote_scores(hypotheses, pixels, directions, cos_threshold: float) -> np.ndarray:
    H = np.ascontiguousarray(hypotheses, dtype=np.float64).reshape(-1, 2)
    P = np.ascontiguousarray(pixels, dtype=np.float64)
    U = np.ascontiguousarray(directions, dtype=np.float64)
    return _kernels.direction_scores(
        np.ascontiguousarray(H[:, 0]), np.ascontiguousarray(H[:, 1]),
        np.ascontiguousarray(P[:, 0]), np.ascontiguousarray(P[:, 1]),
        np.ascontiguousarray(U[:, 0]), np.ascontiguousarray(U[:, 1]),
        float(cos_threshold),
    )


def ray_intersections(p1, d1, p2, d2):
    """Intersect rays p1 + s*d1 and p2 + t*d2 (unit directions).

    Returns (points, condition) where condition is the 2-norm condition
    number of the 2x2 system; it is inf for parallel rays.
    """
    cross = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    c = np.abs(np.sum(d1 * d2, axis=1))
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = np.sqrt((1.0 + c) / (1.0 - c))
        w = p2 - p1
        s = (w[:, 0] * d2[:, 1] - w[:, 1] * d2[:, 0]) / cross
        pts = p1 + s[:, None] * d1
    cond = np.where((cross == 0) | ~np.isfinite(cond), np.inf, cond)
    return pts, cond


def direction_vote_keypoint(field: DirectionField, voter_region: Region,
                            config: VotingConfig = VotingConfig()) -> Hypothesis:
    """Direction-voting baseline with the same hypothesis budget as distance voting.

    ``3 * num_triples`` random voter pairs are intersected as rays; pairs whose
    system condition number exceeds ``direction_max_condition`` are dropped.
    A voter supports a hypothesis when the cosine between its vector and the
    direction toward the hypothesis exceeds ``direction_cos_threshold``. If
    every pair is near-parallel the best-conditioned pair's intersection (or
    the voter centroid) is returned with ``reliable=False``.
    """
    rng = np.random.default_rng(config.keypoint_seed(field.keypoint_index))
    H, W = field.shape
    pix = region_pixels(voter_region, H, W)
    iu, iv = pix[:, 0].astype(np.intp), pix[:, 1].astype(np.intp)
    dirs = field.values[iv, iu]
    keep = np.any(dirs != 0, axis=1)
    pix, dirs = pix[keep], dirs[keep]
    if len(pix) < 2:
        raise ValueError(f"voter region has {len(pix)} usable pixels, need at least 2")
    idx = _sample_indices(len(pix), config.num_voters, rng)
    pix, dirs = pix[idx], dirs[idx]
    n = len(pix)
    m = config.num_hypotheses
    i1 = rng.integers(0, n, m)
    i2 = rng.integers(0, n - 1, m)
    i2 += i2 >= i1
    pts, cond = ray_intersections(pix[i1], dirs[i1], pix[i2], dirs[i2])
    ok = cond <= config.direction_max_condition
    thr = config.direction_cos_threshold
    if not ok.any():
        j = int(np.argmin(cond))
        loc = pts[j] if np.isfinite(cond[j]) else pix.mean(axis=0)
        score = direction_vote_scores(loc, pix, dirs, thr)[0]
        return Hypothesis(loc, int(score), reliable=False)
    hyps = pts[ok]
    scores = direction_vote_scores(hyps, pix, dirs, thr)
    best = int(np.argmax(scores))
    return Hypothesis(hyps[best], int(scores[best]))
