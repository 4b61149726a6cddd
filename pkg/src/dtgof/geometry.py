"""Observation window geometry and the candidate point sets of the KS statistic.

Observations ``(x, t)`` live in the parallelogram

    D = {(x, t) : 0 < t <= x <= t + s, t <= G}

inside the bounding rectangle ``[0, G + s] x [0, G]``.  The supremum of the
distance between empirical and model CDF is attained on a finite set made of
the observations, intersections of discordant pairs, projections onto the upper
and right edges of ``D`` and the corners.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ValidationError

# Row budget for the pairwise scan in ``intersection_points``.
_PAIR_CHUNK = 4_000_000


@dataclass(frozen=True)
class StudyWindow:
    """Birth window length ``G`` and study duration ``s``."""

    G: float
    s: float

    def __post_init__(self):
        for name in ("G", "s"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValidationError(f"{name} must be finite and > 0, got {value!r}")
        object.__setattr__(self, "G", float(self.G))
        object.__setattr__(self, "s", float(self.s))

    @property
    def x_max(self) -> float:
        return self.G + self.s

    def scaled(self, c: float) -> "StudyWindow":
        return StudyWindow(self.G * c, self.s * c)


class Point(NamedTuple):
    x: float
    t: float


@dataclass(frozen=True)
class ObservationSet:
    """A truncated sample; duplicate points are kept."""

    x: np.ndarray
    t: np.ndarray
    window: StudyWindow
    _checked: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        x = np.ascontiguousarray(self.x, dtype=float).reshape(-1)
        t = np.ascontiguousarray(self.t, dtype=float).reshape(-1)
        if x.shape != t.shape:
            raise ValidationError("x and t must have the same length")
        x.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "t", t)
        if self._checked:
            bad = np.flatnonzero(~in_support(self.window, x, t))
            if bad.size:
                j = int(bad[0])
                raise ValidationError(
                    f"observation {j} = ({x[j]!r}, {t[j]!r}) lies outside D "
                    f"(G={self.window.G}, s={self.window.s})"
                )

    @classmethod
    def from_points(cls, points, window: StudyWindow) -> "ObservationSet":
        arr = np.asarray(list(points), dtype=float).reshape(-1, 2)
        return cls(arr[:, 0], arr[:, 1], window)

    @property
    def m(self) -> int:
        return int(self.x.size)

    @property
    def points(self) -> list[Point]:
        return [Point(float(a), float(b)) for a, b in zip(self.x, self.t)]

    def __len__(self) -> int:
        return self.m


def in_support(w: StudyWindow, x, t):
    """True where ``0 < t <= x <= t + s`` and ``t <= G``."""
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    res = (t > 0) & (t <= x) & (x <= t + w.s) & (t <= w.G)
    return bool(res) if res.ndim == 0 else res


def in_rectangle(w: StudyWindow, x, t):
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    res = (x >= 0) & (x <= w.x_max) & (t >= 0) & (t <= w.G)
    return bool(res) if res.ndim == 0 else res


def _unique_points(x: np.ndarray, t: np.ndarray) -> np.ndarray:
    if x.size == 0:
        return np.empty((0, 2))
    pts = np.unique(np.column_stack([x, t]), axis=0)
    return pts


def intersection_points(obs: ObservationSet) -> np.ndarray:
    """Crossings ``(x_j, t_k)`` of discordant pairs, ``x_k < x_j`` and ``t_k > t_j``.

    Returns a deduplicated ``(n, 2)`` array sorted lexicographically.
    """
    x, t = obs.x, obs.t
    m = x.size
    if m < 2:
        return np.empty((0, 2))
    rows = max(1, _PAIR_CHUNK // m)
    xs, ts = [], []
    for start in range(0, m, rows):
        xj = x[start:start + rows, None]
        tj = t[start:start + rows, None]
        jj, kk = np.nonzero((x[None, :] < xj) & (t[None, :] > tj))
        if jj.size:
            # dedup per chunk keeps memory bounded when I is large
            chunk = _unique_points(x[start + jj], t[kk])
            xs.append(chunk[:, 0])
            ts.append(chunk[:, 1])
    if not xs:
        return np.empty((0, 2))
    return _unique_points(np.concatenate(xs), np.concatenate(ts))


def edge_projections(w: StudyWindow, obs: ObservationSet) -> np.ndarray:
    """Projections onto the upper edge ``(x_j, min(x_j, G))`` and right edge ``(t_j + s, t_j)``."""
    px = np.concatenate([obs.x, obs.t + w.s])
    pt = np.concatenate([np.minimum(obs.x, w.G), obs.t])
    return _unique_points(px, pt)


def corner_points(w: StudyWindow) -> tuple[Point, tuple[Point, Point, Point]]:
    return Point(0.0, 0.0), (Point(w.G, 0.0), Point(w.s, w.G), Point(w.G + w.s, w.G))


def region_case(w: StudyWindow, x, t):
    """Branch of the five-case table for the probability of ``[0,x]x[0,t] ∩ D``.

    1: point in D (closed, ``t >= 0``) with ``x > s``; 2: in D with ``x <= s``;
    3: right of D (``t < x - s``); 4: above D with ``x > s``; 5: above D with ``x <= s``.
    """
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    if not np.all(in_rectangle(w, x, t)):
        raise ValidationError("point outside the bounding rectangle [0, G+s] x [0, G]")
    above = x < t
    right = x > t + w.s
    wide = x > w.s
    case = np.where(
        above,
        np.where(wide, 4, 5),
        np.where(right, 3, np.where(wide, 1, 2)),
    )
    return int(case) if case.ndim == 0 else case
