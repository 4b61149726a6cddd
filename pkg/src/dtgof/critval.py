"""Simulated critical values: covariance of the limit process on a grid,
Cholesky sampling of its sup-norm, and quantile extraction.

Four limit processes are supported.  With ``E_i = E g_i``, ``Ed_i`` its
parameter gradient, ``I`` the information matrix and
``K_i = E_i alpha'/alpha - Ed_i``:

    KNOWN_BOTH          E_min - E_1 E_2
    KNOWN_THETA_EST_N   E_min - E_1 E_2 / alpha
    EST_THETA_KNOWN_N   E_min - E_1 E_2 - Ed_1' I^-1 Ed_2
                        + (E_1/alpha) Ed_2' I^-1 alpha' + (E_2/alpha) Ed_1' I^-1 alpha'
    EST_BOTH            E_min - E_1 E_2 / alpha - K_1' I^-1 K_2

Lattice points outside ``D`` carry the same process value as a point on the
boundary of ``D`` (their lower-left rectangles cut ``D`` in the same set), so
the sup-norm is simulated over the distinct effective points only.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import FactorizationError, ValidationError
from .expectations import effective_corner, expect_g, expect_g_grad, expect_g_score
from .geometry import StudyWindow, in_support
from .model import (
    ModelParams,
    alpha,
    alpha_grad,
    density,
    expected_score_derivative,
    fisher_info,
    score,
)
from .quadrature import support_integral

DEFAULT_STEP = 0.25
DEFAULT_CAP = 20_000
JITTER_LADDER = (0.0, 1e-12, 1e-10, 1e-8)
_ROW_BLOCK_CELLS = 4_000_000
_REP_BLOCK = 256


class CovarianceMode(enum.Enum):
    KNOWN_BOTH = "known-both"
    EST_THETA_KNOWN_N = "est-theta"
    KNOWN_THETA_EST_N = "known-theta"
    EST_BOTH = "est-both"

    @classmethod
    def parse(cls, value) -> "CovarianceMode":
        if isinstance(value, cls):
            return value
        text = str(value).strip()
        for mode in cls:
            if text.lower() in (mode.value, mode.name.lower()):
                return mode
        raise ValidationError(f"unknown covariance mode {value!r}; expected one of "
                              f"{', '.join(m.value for m in cls)}")


@dataclass(frozen=True)
class GridSpec:
    """Origin-aligned lattice with spacing ``step`` on ``[0, G+s] x [0, G]``.

    ``cap`` bounds the dimension of any covariance matrix built from the grid.
    """

    step: float = DEFAULT_STEP
    cap: int = DEFAULT_CAP
    restrict_to_d: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.step) and self.step > 0):
            raise ValidationError(f"grid step must be finite and > 0, got {self.step!r}")

    def axes(self, w: StudyWindow) -> tuple[np.ndarray, np.ndarray]:
        nx = int(math.floor(w.x_max / self.step + 1e-9)) + 1
        nt = int(math.floor(w.G / self.step + 1e-9)) + 1
        gx = np.minimum(self.step * np.arange(nx), w.x_max)
        gt = np.minimum(self.step * np.arange(nt), w.G)
        return gx, gt

    def size(self, w: StudyWindow) -> int:
        gx, gt = self.axes(w)
        return gx.size * gt.size

    def points(self, w: StudyWindow) -> np.ndarray:
        """All lattice points, ``(N, 2)``; raises if ``N`` exceeds the cap.

        ``process_points`` is the deduplicated set used for critical values.
        """
        n = self.size(w)
        if n > self.cap:
            raise ValidationError(f"grid of {n} points exceeds the cap {self.cap}; use a larger step")
        gx, gt = self.axes(w)
        xx, tt = np.meshgrid(gx, gt, indexing="ij")
        pts = np.column_stack([xx.ravel(), tt.ravel()])
        if self.restrict_to_d:
            pts = pts[in_support(w, pts[:, 0], pts[:, 1])]
        return pts


def process_points(w: StudyWindow, grid: GridSpec) -> np.ndarray:
    """Distinct effective points of the grid with non-degenerate process value.

    The cap bounds the number of these points, which is the dimension of the
    covariance matrix.  The lattice is scanned in blocks of t-rows so that a
    fine step does not materialise it in full.
    """
    gx, gt = grid.axes(w)
    rows = max(1, _ROW_BLOCK_CELLS // gx.size)
    pts = np.empty((0, 2))
    keys = np.empty((0, 2), dtype=np.int64)
    for lo in range(0, gt.size, rows):
        tt, xx = np.meshgrid(gt[lo:lo + rows], gx, indexing="ij")  # t-major, so blocks concatenate in lattice order
        xe, te = effective_corner(w, xx.ravel(), tt.ravel())
        keep = (xe > 0) & (te > 0)
        eff = np.column_stack([xe[keep], te[keep]])
        # snap to a fine key so that t + s and a lattice x compare equal
        key = np.round(eff / grid.step * 2**20).astype(np.int64)
        pts, keys = np.vstack([pts, eff]), np.vstack([keys, key])
        _, first = np.unique(keys, axis=0, return_index=True)
        first.sort()
        pts, keys = pts[first], keys[first]
        if pts.shape[0] > grid.cap:
            raise ValidationError(f"grid has more than {grid.cap} distinct process points "
                                  f"(the cap); use a larger step")
    return pts


@dataclass(frozen=True)
class _Terms:
    alpha: float
    adot: np.ndarray
    info_inv: np.ndarray


def _terms(params: ModelParams, w: StudyWindow) -> _Terms:
    info = fisher_info(params, w)
    return _Terms(alpha(params, w), alpha_grad(params, w), np.linalg.inv(info))


def _bilinear(a: np.ndarray, m: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``a_i' m b_j`` for rows ``a_i``, ``b_j``."""
    return (a @ m) @ b.T


def _assemble(mode: CovarianceMode, tm: _Terms, emin, e1, e2, d1, d2):
    """Covariance from its ingredients; ``e*`` are vectors, ``d*`` (n, dim) arrays."""
    a = tm.alpha
    if mode is CovarianceMode.KNOWN_BOTH:
        return emin - np.outer(e1, e2)
    if mode is CovarianceMode.KNOWN_THETA_EST_N:
        return emin - np.outer(e1, e2) / a
    if mode is CovarianceMode.EST_THETA_KNOWN_N:
        ia = tm.info_inv @ tm.adot
        return (emin - np.outer(e1, e2) - _bilinear(d1, tm.info_inv, d2)
                + np.outer(e1 / a, d2 @ ia) + np.outer(d1 @ ia, e2 / a))
    k1 = np.outer(e1 / a, tm.adot) - d1
    k2 = np.outer(e2 / a, tm.adot) - d2
    return emin - np.outer(e1, e2) / a - _bilinear(k1, tm.info_inv, k2)


def covariance(params: ModelParams, w: StudyWindow, p1, p2, mode) -> float:
    """Covariance of the limit process between ``g_{p1}`` and ``g_{p2}``."""
    mode = CovarianceMode.parse(mode)
    (x1, t1), (x2, t2) = p1, p2
    tm = _terms(params, w)
    emin = expect_g(params, w, min(x1, x2), min(t1, t2))
    e1 = np.atleast_1d(expect_g(params, w, x1, t1))
    e2 = np.atleast_1d(expect_g(params, w, x2, t2))
    d1 = expect_g_grad(params, w, x1, t1).reshape(1, -1)
    d2 = expect_g_grad(params, w, x2, t2).reshape(1, -1)
    return float(_assemble(mode, tm, np.array([[emin]]), e1, e2, d1, d2)[0, 0])


def covariance_general(params: ModelParams, w: StudyWindow, p1, p2, mode, *,
                       tol: float = 1e-11) -> float:
    """The same covariance from the general influence-function representation.

    ``E(g phi)`` and ``E(phi phi')`` are integrated numerically with
    ``phi = -(E psi')^-1 psi``; only ``E g``, ``Ed g`` and ``alpha`` are closed
    forms.  Used as a cross-check of ``covariance``.
    """
    mode = CovarianceMode.parse(mode)
    (x1, t1), (x2, t2) = p1, p2
    a = alpha(params, w)
    adot = alpha_grad(params, w)
    emin = expect_g(params, w, min(x1, x2), min(t1, t2))
    e1, e2 = expect_g(params, w, x1, t1), expect_g(params, w, x2, t2)
    base = emin - e1 * e2 / a if mode in (CovarianceMode.EST_BOTH, CovarianceMode.KNOWN_THETA_EST_N) \
        else emin - e1 * e2
    if mode in (CovarianceMode.KNOWN_BOTH, CovarianceMode.KNOWN_THETA_EST_N):
        return float(base)
    to_phi = -np.linalg.inv(expected_score_derivative(params, w))
    gphi1 = to_phi @ expect_g_score(params, w, x1, t1, tol=tol)
    gphi2 = to_phi @ expect_g_score(params, w, x2, t2, tol=tol)

    def outer(xx, tt):
        phi = score(params, w, xx, tt) @ to_phi.T
        return phi[..., :, None] * phi[..., None, :] * density(params, w, xx, tt)[..., None, None]

    phiphi = support_integral(outer, w, tol=tol)
    d1, d2 = expect_g_grad(params, w, x1, t1), expect_g_grad(params, w, x2, t2)
    if mode is CovarianceMode.EST_BOTH:
        k1 = e1 * adot / a - d1
        k2 = e2 * adot / a - d2
    else:
        # known n: the estimation term enters through -Ed alone
        k1, k2 = -d1, -d2
    return float(base + k2 @ gphi1 + k1 @ gphi2 + k1 @ phiphi @ k2)


def covariance_matrix(params: ModelParams, w: StudyWindow, points, mode) -> np.ndarray:
    """Dense covariance over ``points`` (an ``(N, 2)`` array or a ``GridSpec``).

    ``E_min`` is looked up in a table over the distinct coordinates, so the
    closed forms are evaluated ``O(#x * #t)`` rather than ``O(N^2)`` times.
    """
    mode = CovarianceMode.parse(mode)
    if isinstance(points, GridSpec):
        points = points.points(w)
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    tm = _terms(params, w)
    ux, ix = np.unique(pts[:, 0], return_inverse=True)
    ut, it = np.unique(pts[:, 1], return_inverse=True)
    table = np.asarray(expect_g(params, w, ux[:, None], ut[None, :]))
    e = table[ix, it]
    d = expect_g_grad(params, w, pts[:, 0], pts[:, 1]).reshape(pts.shape[0], -1)
    n = pts.shape[0]
    out = np.empty((n, n))
    rows = max(1, _ROW_BLOCK_CELLS // max(n, 1))
    for lo in range(0, n, rows):
        sl = slice(lo, lo + rows)
        emin = table[np.minimum(ix[sl, None], ix[None, :]), np.minimum(it[sl, None], it[None, :])]
        out[sl] = _assemble(mode, tm, emin, e[sl], e, d[sl], d)
    # exact symmetry; assembly order differs only at rounding level
    out += out.T
    out *= 0.5
    return out


def cholesky_jitter(matrix: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor after the smallest sufficient diagonal jitter.

    Returns ``(L, lambda)`` with the added diagonal ``lambda * mean(diag)``.
    """
    scale = float(np.mean(np.diag(matrix))) if matrix.size else 0.0
    for lam in JITTER_LADDER:
        a = np.array(matrix, dtype=float, order="F", copy=True)
        if lam:
            a[np.diag_indices_from(a)] += lam * scale
        try:
            return linalg.cholesky(a, lower=True, overwrite_a=True, check_finite=False), lam
        except linalg.LinAlgError:
            continue
    raise FactorizationError(f"Cholesky failed up to jitter {JITTER_LADDER[-1]} * mean(diag)")


def _nonzero_part(matrix: np.ndarray) -> np.ndarray:
    """Rows with positive variance; a PSD matrix is zero on the other rows."""
    keep = np.diag(matrix) > 0
    return matrix[np.ix_(keep, keep)]


def sup_from_factor(factor: np.ndarray, reps: int, seed: int) -> np.ndarray:
    """``reps`` draws of ``max_i |(L eta)_i|``, sorted ascending.

    Draw ``r`` uses its own substream spawned from ``seed``, and columns are
    processed independently, so the output does not depend on blocking or
    on the number of BLAS threads.
    """
    if reps < 1:
        raise ValidationError("reps must be >= 1")
    streams = np.random.SeedSequence(seed).spawn(reps)
    n = factor.shape[0]
    if n == 0:
        return np.zeros(reps)
    out = np.empty(reps)
    for lo in range(0, reps, _REP_BLOCK):
        block = streams[lo:lo + _REP_BLOCK]
        eta = np.empty((n, len(block)))
        for k, ss in enumerate(block):
            eta[:, k] = np.random.default_rng(ss).standard_normal(n)
        z = linalg.blas.dtrmm(1.0, factor, eta, lower=1)
        out[lo:lo + len(block)] = np.max(np.abs(z), axis=0)
    out.sort()
    return out


def simulate_sup(matrix: np.ndarray, reps: int, seed: int) -> np.ndarray:
    """Sorted sup-norm draws of a centred Gaussian vector with covariance ``matrix``."""
    sub = _nonzero_part(np.asarray(matrix, dtype=float))
    if sub.shape[0] == 0:
        if reps < 1:
            raise ValidationError("reps must be >= 1")
        return np.zeros(reps)
    factor, _ = cholesky_jitter(sub)
    return sup_from_factor(factor, reps, seed)


def order_statistic_quantile(sorted_values: np.ndarray, level: float) -> float:
    """Order statistic of rank ``ceil(level * R)``."""
    r = sorted_values.size
    k = min(r, max(1, math.ceil(level * r - 1e-9)))
    return float(sorted_values[k - 1])


@dataclass(frozen=True)
class CriticalValueResult:
    quantiles: dict
    reps: int
    seed: int
    grid: GridSpec
    mode: CovarianceMode
    jitter_used: float
    n_points: int
    samples: np.ndarray = field(repr=False, compare=False)

    def mc_standard_error(self, level: float) -> float:
        """Order-statistic standard error of a quantile from a kernel density estimate."""
        return quantile_standard_error(self.samples, level)


def quantile_standard_error(sorted_values: np.ndarray, level: float) -> float:
    r = sorted_values.size
    h = max(1, int(math.ceil(math.sqrt(r))))
    k = math.ceil(level * r) - 1
    lo, hi = max(0, k - h), min(r - 1, k + h)
    spread = sorted_values[hi] - sorted_values[lo]
    if spread <= 0:
        return 0.0
    dens = (hi - lo) / r / spread
    return float(math.sqrt(level * (1 - level) / r) / dens)


def _check_levels(levels) -> tuple[float, ...]:
    levels = tuple(float(x) for x in levels)
    if not levels or not all(0.0 < x < 1.0 for x in levels):
        raise ValidationError(f"levels must lie in (0, 1), got {levels}")
    return levels


def critical_value(params: ModelParams, w: StudyWindow, grid: GridSpec, mode, levels,
                   reps: int, seed: int) -> CriticalValueResult:
    """Quantiles of the simulated sup-norm of the limit process."""
    mode = CovarianceMode.parse(mode)
    levels = _check_levels(levels)
    if reps < 1:
        raise ValidationError("reps must be >= 1")
    pts = process_points(w, grid)
    mat = _nonzero_part(covariance_matrix(params, w, pts, mode))
    if mat.shape[0]:
        factor, lam = cholesky_jitter(mat)
        samples = sup_from_factor(factor, reps, seed)
    else:
        lam, samples = 0.0, np.zeros(reps)
    quant = {lv: order_statistic_quantile(samples, lv) for lv in sorted(levels)}
    return CriticalValueResult(quant, int(reps), int(seed), grid, mode, lam, int(pts.shape[0]), samples)


class Decision(enum.Enum):
    ACCEPT = "ACCEPT"
    REJECT = "REJECT"


def decide(statistic: float, critical: float) -> Decision:
    """Reject iff the statistic strictly exceeds the critical value."""
    if statistic < 0 or critical < 0:
        raise ValidationError("statistic and critical value must be >= 0")
    return Decision.REJECT if statistic > critical else Decision.ACCEPT
