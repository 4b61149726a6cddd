"""Tensor Gauss-Legendre integration over ``[0, x] x [0, t] ∩ D``.

The region is cut at ``t' = x - s`` into a band piece (``t' <= x' <= t' + s``)
and a cap piece (``t' <= x' <= x``); each is mapped onto the unit square, so
the integrand only ever sees smooth pieces.  The order is doubled until two
consecutive rules agree to ``tol``.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .errors import NumericalError
from .geometry import StudyWindow


@lru_cache(maxsize=None)
def _gauss_legendre_unit(n: int) -> tuple[np.ndarray, np.ndarray]:
    nodes, weights = np.polynomial.legendre.leggauss(n)
    return 0.5 * (nodes + 1.0), 0.5 * weights


def _rule(func, w: StudyWindow, x: float, t: float, n: int) -> np.ndarray:
    c2 = min(t, x, w.G)
    c1 = min(max(x - w.s, 0.0), c2)
    u, wu = _gauss_legendre_unit(n)
    total = 0.0
    if c1 > 0:
        tau = c1 * u[:, None]
        xi = tau + w.s * u[None, :]
        jac = (c1 * w.s) * (wu[:, None] * wu[None, :])
        vals = np.asarray(func(xi, np.broadcast_to(tau, xi.shape)))
        total = total + np.tensordot(jac, vals, axes=([0, 1], [0, 1]))
    if c2 > c1:
        tau = c1 + (c2 - c1) * u[:, None]
        width = x - tau
        xi = tau + width * u[None, :]
        jac = (c2 - c1) * width * (wu[:, None] * wu[None, :])
        vals = np.asarray(func(xi, np.broadcast_to(tau, xi.shape)))
        total = total + np.tensordot(jac, vals, axes=([0, 1], [0, 1]))
    return np.asarray(total, dtype=float)


def region_integral(func, w: StudyWindow, x: float, t: float, *, tol: float = 1e-10,
                    order: int = 16, max_order: int = 2048) -> np.ndarray:
    """Integrate ``func(x', t')`` over ``[0, x] x [0, t] ∩ D``.

    ``func`` takes two equally shaped arrays and returns an array of that shape,
    optionally with trailing component axes.
    """
    x = float(x)
    t = float(t)
    if min(t, x, w.G) <= 0:
        probe = np.asarray(func(np.full((1, 1), 1.0), np.full((1, 1), 0.5)))
        return np.zeros(probe.shape[2:])
    prev = _rule(func, w, x, t, order)
    while order < max_order:
        order *= 2
        cur = _rule(func, w, x, t, order)
        if np.max(np.abs(cur - prev)) <= tol:
            return cur
        prev = cur
    raise NumericalError(f"region quadrature did not reach tol={tol} at order {max_order}")


def support_integral(func, w: StudyWindow, **kw) -> np.ndarray:
    """Integrate ``func`` over the whole parallelogram ``D``."""
    return region_integral(func, w, w.x_max, w.G, **kw)
