"""Compiled inner loops for hypothesis scoring."""

from __future__ import annotations

import math

import numba
import numpy as np


@numba.njit(cache=True)
def distance_scores(hx, hy, px, py, dist, theta):
    nh = hx.shape[0]
    n = px.shape[0]
    out = np.zeros(nh, np.int64)
    for l in range(nh):
        x = hx[l]
        y = hy[l]
        c = 0
        for i in range(n):
            dx = x - px[i]
            dy = y - py[i]
            c += abs(math.sqrt(dx * dx + dy * dy) - dist[i]) < theta
        out[l] = c
    return out


@numba.njit(cache=True)
def direction_scores(hx, hy, px, py, ux, uy, cos_threshold):
    nh = hx.shape[0]
    n = px.shape[0]
    c2 = cos_threshold * cos_threshold
    out = np.zeros(nh, np.int64)
    for l in range(nh):
        x = hx[l]
        y = hy[l]
        c = 0
        for i in range(n):
            dx = x - px[i]
            dy = y - py[i]
            dot = dx * ux[i] + dy * uy[i]
            # squared form of dot > cos * |d|; a voter on the hypothesis never counts
            c += dot > 0.0 and dot * dot > c2 * (dx * dx + dy * dy)
        out[l] = c
    return out
