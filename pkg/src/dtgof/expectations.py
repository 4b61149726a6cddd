"""Closed-form probabilities of ``[0, x] x [0, t] ∩ D`` and their parameter derivatives.

The region is a rectangle minus a lower triangle (below ``x' = t' + s``) and
an upper triangle (above ``x' = t'``).  Each piece is affine in the FGM
parameter, so every helper returns ``(base, dep, dbase, ddep)``:

    piece = base + vartheta * dep,   d piece / d theta = dbase + vartheta * ddep.

The product copula uses ``base``/``dbase`` only.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError
from .geometry import StudyWindow, in_rectangle
from .model import Copula, ModelParams, _score_raw, alpha, alpha_grad, density
from .quadrature import region_integral


def _rect(th: float, G: float, x, t):
    """Rectangle ``[0, x] x [0, t]``: the copula CDF itself."""
    e = np.exp(-th * x)
    u = -np.expm1(-th * x)
    v = t / G
    return v * u, v * u * e * (1.0 - v), v * x * e, v * (1.0 - v) * x * e * (2.0 * e - 1.0)


def _lower(th: float, G: float, s: float, x):
    """Triangle ``{s + t' <= x' <= x}``; only meaningful for ``x >= s``."""
    d = x - s
    e = np.exp(-th * x)
    es = np.exp(-th * s)
    base = es * (-np.expm1(-th * d) - th * d * np.exp(-th * d)) / (G * th)
    dbase = e / G * (x * x - s * x + x / th + 1.0 / th**2) - es / (G * th) * (s + 1.0 / th)
    c = 2.0 / (G * th) ** 2
    dep = (-(d / G) * (1.0 - d / G) * e * (e - 1.0)
           - (1.0 - 2.0 * d / G) * (0.5 * e * e - e) / (th * G)
           + (0.5 * es * es - es) / (th * G)
           + c * (0.25 * e * e - e)
           - c * (0.25 * es * es - es))
    ddep = (-(d / G) * (1.0 - d / G) * x * e * (1.0 - 2.0 * e)
            - (1.0 - 2.0 * d / G) / (G * th) * (x * e * (1.0 - e) - (0.5 * e * e - e) / th)
            + (s * es * (1.0 - es) - (0.5 * es * es - es) / th) / (G * th)
            + c * (x * e * (1.0 - 0.5 * e) - 2.0 * (0.25 * e * e - e) / th)
            - c * (s * es * (1.0 - 0.5 * es) - 2.0 * (0.25 * es * es - es) / th))
    return base, dep, dbase, ddep


def _upper(th: float, G: float, t):
    """Triangle ``{x' < t' <= t}`` above the diagonal."""
    e = np.exp(-th * t)
    base = (t + np.expm1(-th * t) / th) / G
    dbase = (1.0 - e * (1.0 + th * t)) / (G * th**2)
    c = 2.0 / (G * th) ** 2
    tf = 1.0 - 2.0 * t / G
    dep = (tf * e * (0.5 * e - 1.0) / (th * G) + 0.5 / (th * G)
           - c * e * (0.25 * e - 1.0) - 0.75 * c)
    ddep = (tf / (G * th) * (t * e * (1.0 - e) - (0.5 * e * e - e) / th)
            - 0.5 / (G * th**2)
            - c * (t * e * (1.0 - 0.5 * e) - 2.0 * (0.25 * e * e - e) / th)
            + 1.5 * c / th)
    return base, dep, dbase, ddep


def effective_corner(w: StudyWindow, x, t):
    """Point of ``D`` whose lower-left rectangle meets ``D`` in the same set as ``(x, t)``."""
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    above = x < t
    right = x > t + w.s
    xe = np.where(right, t + w.s, x)
    te = np.where(above, x, t)
    return xe, te


def _pieces(theta: float, w: StudyWindow, x, t):
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    if not np.all(in_rectangle(w, x, t)):
        raise ValidationError("point outside the bounding rectangle [0, G+s] x [0, G]")
    G, s = w.G, w.s
    xe, te = effective_corner(w, x, t)
    r = _rect(theta, G, xe, te)
    u = _upper(theta, G, te)
    wide = xe > s
    # evaluate the lower triangle only where it exists; elsewhere it is empty
    lo = _lower(theta, G, s, np.where(wide, xe, s))
    return tuple(ri - np.where(wide, li, 0.0) - ui for ri, li, ui in zip(r, lo, u))


def expect_g(params: ModelParams, w: StudyWindow, x, t):
    """``P((X, T) in [0, x] x [0, t] ∩ D)``."""
    base, dep, _, _ = _pieces(params.theta, w, x, t)
    out = base + params.vartheta * dep if params.copula is Copula.FGM else base
    return float(out) if np.ndim(out) == 0 else out


def expect_g_grad(params: ModelParams, w: StudyWindow, x, t) -> np.ndarray:
    """Parameter gradient of ``expect_g``, shape ``x.shape + (dim,)``."""
    _, dep, dbase, ddep = _pieces(params.theta, w, x, t)
    if params.copula is Copula.PRODUCT:
        return np.asarray(dbase)[..., None]
    return np.stack([dbase + params.vartheta * ddep, dep], axis=-1)


def expect_g_min(params: ModelParams, w: StudyWindow, x1, t1, x2, t2):
    """``E[g_1 g_2]``: probability of the intersection of both lower-left rectangles."""
    return expect_g(params, w, np.minimum(x1, x2), np.minimum(t1, t2))


def expect_g_score(params: ModelParams, w: StudyWindow, x: float, t: float,
                   *, tol: float = 1e-10) -> np.ndarray:
    """``E[g psi]`` by Gauss-Legendre quadrature over ``[0, x] x [0, t] ∩ D``."""
    if not in_rectangle(w, x, t):
        raise ValidationError("point outside the bounding rectangle [0, G+s] x [0, G]")
    a = alpha(params, w)
    da = alpha_grad(params, w)

    def integrand(xx, tt):
        return _score_raw(params, w, xx, tt, a, da) * density(params, w, xx, tt)[..., None]

    return region_integral(integrand, w, x, t, tol=tol)
