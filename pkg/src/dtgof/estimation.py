"""Z-estimation of the model parameters and of the latent sample size."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import BoundaryHit, NoRoot, NumericalError, ValidationError
from .geometry import ObservationSet
from .model import (
    DEFAULT_EPS_THETA,
    DEFAULT_EPS_VARTHETA,
    Copula,
    ModelParams,
    _score_raw,
    alpha,
    alpha_grad,
    density,
)

SCORE_TOL = 1e-8
STEP_TOL = 1e-10
MAX_ITER = 200
FGM_STARTS = (0.0, -0.5, 0.5)
PROFILE_GRID = 41


@dataclass(frozen=True)
class EstimateResult:
    params: ModelParams
    score_norm: float
    iterations: int
    latent_n: float
    alpha: float


def estimate_latent_n(m: int, alpha_value: float) -> float:
    """``m / alpha``, the estimated number of latent units."""
    if m < 1:
        raise ValidationError("m must be >= 1")
    if not 0.0 < alpha_value < 1.0:
        raise ValidationError("alpha must lie in (0, 1)")
    return m / alpha_value


def score_sum(params: ModelParams, obs: ObservationSet) -> np.ndarray:
    """``sum_j psi(x_j, t_j)``; every observation is in D by construction."""
    a = alpha(params, obs.window)
    da = alpha_grad(params, obs.window)
    return _score_raw(params, obs.window, obs.x, obs.t, a, da).sum(axis=0)


def _g(a: float) -> float:
    """``1 - a / expm1(a)``."""
    if a < 1e-4:
        return a / 2.0 - a * a / 12.0 + a**4 / 720.0
    if a > 700.0:
        return 1.0
    return 1.0 - a / math.expm1(a)


def product_mean_lifetime(theta: float, G: float, s: float) -> float:
    """Mean of X over D under the product model; decreases from (G+s)/2 to 0."""
    return (_g(theta * s) + _g(theta * G)) / theta


def _estimate_product(obs: ObservationSet, eps: float) -> tuple[float, int]:
    w = obs.window
    xbar = float(np.mean(obs.x))
    lo, hi = eps * (1.0 + 1e-9), (1.0 / eps) * (1.0 - 1e-9)

    def f(log_theta: float) -> float:
        return xbar - product_mean_lifetime(math.exp(log_theta), w.G, w.s)

    f_lo, f_hi = f(math.log(lo)), f(math.log(hi))
    if f_lo >= 0.0 or f_hi <= 0.0:
        raise NoRoot(
            f"mean lifetime {xbar!r} outside the range attainable by the product model "
            f"(0, {(w.G + w.s) / 2})"
        )
    root, info = brentq(f, math.log(lo), math.log(hi), xtol=1e-15, rtol=4 * np.finfo(float).eps,
                        maxiter=MAX_ITER, full_output=True)
    if not info.converged:
        raise NoRoot(f"bracketing did not converge: {info.flag}")
    return math.exp(root), info.iterations


def _fd_jacobian(fun, v: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Central differences, shifted to one side where the stencil would leave the box."""
    jac = np.empty((v.size, v.size))
    for k in range(v.size):
        h = 1e-6 * max(abs(v[k]), 1e-3) if k == 0 else 1e-6
        a, b = v.copy(), v.copy()
        a[k] = max(v[k] - h, lo[k])
        b[k] = min(v[k] + h, hi[k])
        jac[:, k] = (fun(b) - fun(a)) / (b[k] - a[k])
    return jac


def _newton(fun, v0: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    """Damped Newton with step halving and box projection.

    Returns ``(v, norm, iterations, converged)``.
    """
    v = np.clip(v0, lo, hi)
    f = fun(v)
    norm = float(np.linalg.norm(f))
    for it in range(1, MAX_ITER + 1):
        if norm <= SCORE_TOL:
            return v, norm, it - 1, True
        jac = _fd_jacobian(fun, v, lo, hi)
        try:
            step = -np.linalg.solve(jac, f)
        except np.linalg.LinAlgError:
            return v, norm, it, False
        lam = 1.0
        while lam > 1e-10:
            cand = np.clip(v + lam * step, lo, hi)
            f_c = fun(cand)
            n_c = float(np.linalg.norm(f_c))
            if n_c < norm:
                break
            lam *= 0.5
        else:
            return v, norm, it, False
        moved = float(np.max(np.abs(cand - v) / np.maximum(np.abs(v), 1.0)))
        v, f, norm = cand, f_c, n_c
        if moved <= STEP_TOL:
            return v, norm, it, norm <= SCORE_TOL
    return v, norm, MAX_ITER, norm <= SCORE_TOL


def _log_likelihood(params: ModelParams, obs: ObservationSet) -> float:
    f = density(params, obs.window, obs.x, obs.t)
    return float(np.sum(np.log(f)) - obs.m * math.log(alpha(params, obs.window)))


def _profile_theta(fun, vt: float, theta0: float, lo: float, hi: float) -> float | None:
    """Root in theta of the first score equation at fixed ``vt``, or None."""
    def g(log_t):
        return fun(np.array([math.exp(log_t), vt]))[0]

    a = b = math.log(theta0)
    ga = gb = g(a)
    llo, lhi = math.log(lo), math.log(hi)
    # widen in log-space until the sign changes or both ends hit the box
    while ga * gb > 0.0:
        if a <= llo and b >= lhi:
            return None
        a, b = max(a - 1.0, llo), min(b + 1.0, lhi)
        ga, gb = g(a), g(b)
    if ga == 0.0:
        return math.exp(a)
    if gb == 0.0:
        return math.exp(b)
    return math.exp(brentq(g, a, b, xtol=1e-14, rtol=1e-14, maxiter=MAX_ITER))


def _profile_roots(fun, theta0: float, lo: np.ndarray, hi: np.ndarray):
    """Scan the second score equation along the profile ``theta(vartheta)``.

    Returns the bracketed roots and whether the profile keeps one sign,
    which places any root beyond the dependence bounds.
    """
    def prof(vt):
        th = _profile_theta(fun, vt, theta0, lo[0], hi[0])
        return (np.nan, th) if th is None else (fun(np.array([th, vt]))[1], th)

    grid = np.linspace(lo[1], hi[1], PROFILE_GRID)
    vals = [prof(v) for v in grid]
    roots = []
    for k in range(grid.size - 1):
        (fa, _), (fb, _) = vals[k], vals[k + 1]
        if np.isfinite(fa) and np.isfinite(fb) and fa * fb <= 0.0:
            def h(v):
                val = prof(v)[0]
                if not np.isfinite(val):
                    raise NoRoot("profile equation undefined inside a bracket")
                return val
            try:
                vt = brentq(h, grid[k], grid[k + 1], xtol=1e-13, maxiter=MAX_ITER)
            except NoRoot:
                continue
            roots.append(np.array([prof(vt)[1], vt]))
    finite = [f for f, _ in vals if np.isfinite(f)]
    one_sign = bool(finite) and (all(f > 0 for f in finite) or all(f < 0 for f in finite))
    return roots, one_sign


def _estimate_fgm(obs: ObservationSet, eps_t: float, eps_v: float):
    w = obs.window
    m = obs.m
    try:
        theta0, _ = _estimate_product(obs, eps_t)
    except NoRoot:
        theta0 = 1.0 / max(float(np.mean(obs.x)), eps_t)
    # the box sits strictly inside the open parameter space
    lo = np.array([eps_t * (1 + 1e-9), -1.0 + 2 * eps_v])
    hi = np.array([(1 / eps_t) * (1 - 1e-9), 1.0 - 2 * eps_v])

    def fun(v):
        p = ModelParams(Copula.FGM, v[0], v[1], eps_t, eps_v)
        return score_sum(p, obs) / m

    best = None
    for vt0 in FGM_STARTS:
        try:
            v, norm, it, ok = _newton(fun, np.array([theta0, vt0]), lo, hi)
        except NumericalError:
            continue
        if ok:
            return v, it
        if best is None or norm < best:
            best = norm

    # Newton can stall where the score norm has a local minimum that is not a
    # root; a bracketed search along the profile in vartheta settles it.
    roots, one_sign = _profile_roots(fun, theta0, lo, hi)
    found = []
    for r in roots:
        v, _, it, ok = _newton(fun, r, lo, hi)
        if ok:
            found.append((v, it))
    if found:
        lls = [_log_likelihood(ModelParams(Copula.FGM, v[0], v[1], eps_t, eps_v), obs) for v, _ in found]
        v, it = found[int(np.argmax(lls))]
        return v, it
    if one_sign:
        raise BoundaryHit("FGM score root lies on the edge of the parameter space")
    raise NoRoot(f"no root of the FGM score equations (best mean score norm {best})")


def estimate(obs: ObservationSet, copula, *, eps_theta: float = DEFAULT_EPS_THETA,
             eps_vartheta: float = DEFAULT_EPS_VARTHETA) -> EstimateResult:
    """Root of the summed score for the chosen copula.

    Raises ``NoRoot`` when no root exists inside the parameter space and
    ``BoundaryHit`` when the iteration is pushed onto its edge.
    """
    copula = Copula.parse(copula)
    if obs.m < 2:
        raise ValidationError("estimation needs at least two observations")
    if copula is Copula.PRODUCT:
        theta, iters = _estimate_product(obs, eps_theta)
        params = ModelParams(copula, theta, 0.0, eps_theta, eps_vartheta)
    else:
        v, iters = _estimate_fgm(obs, eps_theta, eps_vartheta)
        params = ModelParams(copula, v[0], v[1], eps_theta, eps_vartheta)
    norm = float(np.linalg.norm(score_sum(params, obs)))
    if not norm <= SCORE_TOL * obs.m:
        raise NoRoot(f"score sum {norm!r} above tolerance {SCORE_TOL * obs.m!r} at the returned root")
    a = alpha(params, obs.window)
    return EstimateResult(params, norm, int(iters), estimate_latent_n(obs.m, a), a)


def opg_standard_errors(params: ModelParams, obs: ObservationSet) -> np.ndarray:
    """Standard errors from the outer product of scores, ``sqrt(diag((sum psi psi^T)^-1))``.

    Diagnostic only.
    """
    sc = _score_raw(params, obs.window, obs.x, obs.t)
    return np.sqrt(np.diag(np.linalg.inv(sc.T @ sc)))
