"""Composite KS statistic over the finite candidate set.

``D+(p) = F_emp(p) - F_theo(p)`` is maximised at observations and at
intersections of discordant pairs; the left-limit difference
``D-(p) = F_theo(p) - F_emp(p-)`` at intersections, edge projections and
corners.  Left limits are obtained by strict-inequality counting, which
reproduces the ``2/m - D+`` and ``1/m - D+`` shortcuts for tie-free samples
and stays exact with ties.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .expectations import expect_g
from .geometry import (
    ObservationSet,
    StudyWindow,
    corner_points,
    edge_projections,
    intersection_points,
)
from .model import ModelParams, alpha

# Cell budget of the prefix table (int32) and of one remainder block.
_TABLE_CELLS = 16_000_000
_BLOCK_CELLS = 4_000_000
_EVAL_CHUNK = 1_000_000


class DominanceCounter:
    """Counts ``#{j : x_j <= qx, t_j <= qt}`` (or with ``<``) for many queries.

    Observations are sorted by ``x``.  A prefix table holds, for every
    ``B``-th position in that order, the cumulative histogram of ``t``-ranks,
    so a query costs one lookup plus a scan of fewer than ``B`` observations.
    For moderate ``m`` the block size is 1 and queries are pure lookups.
    """

    def __init__(self, x: np.ndarray, t: np.ndarray):
        m = x.size
        order = np.argsort(x, kind="stable")
        self.m = m
        self.xs = x[order]
        self.ts = np.sort(t)
        rank = np.searchsorted(self.ts, t[order], side="left").astype(np.int64)
        self.rank = rank
        self.B = max(1, math.ceil((m + 1) ** 2 / _TABLE_CELLS))
        nb = m // self.B
        hist = np.zeros((nb + 1, m + 1), dtype=np.int32)
        full = nb * self.B
        np.add.at(hist, (np.arange(full) // self.B + 1, rank[:full] + 1), 1)
        self.table = np.cumsum(np.cumsum(hist, axis=0, dtype=np.int32), axis=1, dtype=np.int32)

    def count(self, qx, qt, strict: bool = False) -> np.ndarray:
        qx = np.asarray(qx, dtype=float)
        qt = np.asarray(qt, dtype=float)
        shape = np.broadcast(qx, qt).shape
        qx = np.broadcast_to(qx, shape).reshape(-1)
        qt = np.broadcast_to(qt, shape).reshape(-1)
        side = "left" if strict else "right"
        idx = np.searchsorted(self.xs, qx, side=side)
        kt = np.searchsorted(self.ts, qt, side=side)
        b = idx // self.B
        out = self.table[b, kt].astype(np.int64)
        if self.B > 1:
            start = b * self.B
            rem = idx - start
            offs = np.arange(self.B)
            chunk = max(1, _BLOCK_CELLS // self.B)
            padded = np.concatenate([self.rank, np.full(self.B, self.m + 1, dtype=np.int64)])
            for lo in range(0, out.size, chunk):
                sl = slice(lo, lo + chunk)
                r = padded[start[sl, None] + offs[None, :]]
                hit = (offs[None, :] < rem[sl, None]) & (r < kt[sl, None])
                out[sl] += hit.sum(axis=1)
        return out.reshape(shape)


def empirical_cdf(obs: ObservationSet, x, t, *, strict: bool = False,
                  counter: DominanceCounter | None = None):
    """Share of observations in ``[0, x] x [0, t]``; ``strict=True`` gives the left limit."""
    if obs.m == 0:
        raise ValidationError("empirical CDF of an empty sample")
    counter = counter or DominanceCounter(obs.x, obs.t)
    out = counter.count(x, t, strict=strict) / obs.m
    return float(out) if np.ndim(out) == 0 else out


def theoretical_obs_cdf(params: ModelParams, w: StudyWindow, x, t):
    """Distribution function of an observation, ``E g_{x,t,D} / alpha``."""
    a = alpha(params, w)
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    if x.size <= _EVAL_CHUNK:
        out = np.asarray(expect_g(params, w, x, t)) / a
    else:
        xb, tb = np.broadcast_arrays(x, t)
        flat_x, flat_t = xb.reshape(-1), tb.reshape(-1)
        out = np.empty(flat_x.size)
        for lo in range(0, flat_x.size, _EVAL_CHUNK):
            sl = slice(lo, lo + _EVAL_CHUNK)
            out[sl] = expect_g(params, w, flat_x[sl], flat_t[sl])
        out = (out / a).reshape(xb.shape)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class StatisticBreakdown:
    delta1: float
    delta2: float
    delta3: float
    delta4: float
    delta5: float
    statistic: float
    evaluation_count: int
    n_intersections: int
    alpha: float
    m: int

    @property
    def deltas(self) -> tuple[float, ...]:
        return (self.delta1, self.delta2, self.delta3, self.delta4, self.delta5)


def ks_statistic(obs: ObservationSet, params: ModelParams) -> StatisticBreakdown:
    """``sqrt(alpha m) * sup |F_emp - F_theo|`` over the closed and left-limit versions.

    ``delta2`` and ``delta3`` are ``-inf`` when no discordant pair exists.
    """
    if obs.m < 1:
        raise ValidationError("the KS statistic needs at least one observation")
    w = obs.window
    a = alpha(params, w)
    m = obs.m
    counter = DominanceCounter(obs.x, obs.t)

    def d_plus(pts):
        return counter.count(pts[:, 0], pts[:, 1]) / m - theoretical_obs_cdf(params, w, pts[:, 0], pts[:, 1])

    def d_minus(pts):
        return theoretical_obs_cdf(params, w, pts[:, 0], pts[:, 1]) - counter.count(pts[:, 0], pts[:, 1], strict=True) / m

    own = np.unique(np.column_stack([obs.x, obs.t]), axis=0)
    inter = intersection_points(obs)
    proj = edge_projections(w, obs)
    origin, corners = corner_points(w)

    delta1 = float(np.max(d_plus(own)))
    if inter.shape[0]:
        delta2 = float(np.max(d_plus(inter)))
        delta3 = float(np.max(d_minus(inter)))
    else:
        delta2 = delta3 = -math.inf
    delta4 = float(np.max(d_minus(proj)))
    corner_arr = np.array(corners, dtype=float)
    delta5 = max(float(d_plus(np.array([origin], dtype=float))[0]), float(np.max(d_minus(corner_arr))))

    sup = max(delta1, delta2, delta3, delta4, delta5)
    evals = own.shape[0] + inter.shape[0] + proj.shape[0] + 1 + len(corners)
    return StatisticBreakdown(delta1, delta2, delta3, delta4, delta5,
                              math.sqrt(a * m) * sup, int(evals), int(inter.shape[0]), a, m)


def lattice_axis(lo: float, hi: float, step: float) -> np.ndarray:
    """Points ``lo + k step`` up to ``hi``, with ``hi`` appended if it is not on the lattice."""
    n = int(math.floor((hi - lo) / step + 1e-9))
    ax = lo + step * np.arange(n + 1)
    ax = ax[ax <= hi]
    if hi - ax[-1] > 1e-12 * max(1.0, hi):
        ax = np.append(ax, hi)
    else:
        ax[-1] = hi
    return ax


def ks_statistic_bruteforce(obs: ObservationSet, params: ModelParams, step: float) -> float:
    """Grid approximation of the supremum, closed and left-limit empirical CDF.

    Independent of the candidate-set reduction: the empirical CDF on the grid
    comes from a cumulative 2D histogram.  Always a lower bound of the exact
    statistic; the gap is at most ``sqrt(alpha m) * lipschitz_bound * step``.
    """
    if not step > 0:
        raise ValidationError("step must be > 0")
    w = obs.window
    a = alpha(params, w)
    m = obs.m
    gx = lattice_axis(0.0, w.x_max, step)
    gt = lattice_axis(0.0, w.G, step)

    def grid_cdf(side: str) -> np.ndarray:
        ix = np.searchsorted(gx, obs.x, side=side)
        it = np.searchsorted(gt, obs.t, side=side)
        hist = np.zeros((gx.size + 1, gt.size + 1))
        np.add.at(hist, (ix, it), 1.0)
        return np.cumsum(np.cumsum(hist, axis=0), axis=1)[:-1, :-1] / m

    closed = grid_cdf("left")
    strict = grid_cdf("right")
    best = 0.0
    rows = max(1, _EVAL_CHUNK // gt.size)
    for lo in range(0, gx.size, rows):
        xx = gx[lo:lo + rows, None]
        f = np.asarray(expect_g(params, w, np.broadcast_to(xx, (xx.shape[0], gt.size)), gt[None, :])) / a
        best = max(best, float(np.max(np.abs(closed[lo:lo + rows] - f))),
                   float(np.max(np.abs(strict[lo:lo + rows] - f))))
    return math.sqrt(a * m) * best


def density_sup(params: ModelParams, w: StudyWindow) -> float:
    """Upper bound of the density on ``D``."""
    return params.theta / w.G * (1.0 + abs(params.vartheta))


def lipschitz_bound(params: ModelParams, w: StudyWindow) -> float:
    """Bound on ``|F_theo(p) - F_theo(p')|`` per unit of ``max(|dx|, |dt|)``.

    A shift by ``h`` in ``x`` sweeps a strip of ``D`` at most ``min(s, G)`` tall,
    a shift in ``t`` one at most ``s`` wide.
    """
    return density_sup(params, w) / alpha(params, w) * (min(w.s, w.G) + w.s)
