"""Exponential lifetime, uniform truncation age, product or FGM copula.

Population density on ``S = [0, inf) x [0, G]``::

    f(x, t) = theta / G * exp(-theta x) * [1 + vartheta (2 exp(-theta x) - 1)(1 - 2 t / G)]

with ``vartheta = 0`` for the product copula.  All "expectations" are taken
under this latent (untruncated) law; scores carry the indicator of ``D``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ValidationError
from .geometry import StudyWindow, in_support
from .quadrature import support_integral

DEFAULT_EPS_THETA = 1e-6
DEFAULT_EPS_VARTHETA = 1e-6


class Copula(enum.Enum):
    PRODUCT = "product"
    FGM = "fgm"

    @classmethod
    def parse(cls, value) -> "Copula":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValidationError(f"unknown copula {value!r}; expected 'product' or 'fgm'") from None


@dataclass(frozen=True)
class ModelParams:
    copula: Copula
    theta: float
    vartheta: float = 0.0
    eps_theta: float = DEFAULT_EPS_THETA
    eps_vartheta: float = DEFAULT_EPS_VARTHETA

    def __post_init__(self):
        object.__setattr__(self, "copula", Copula.parse(self.copula))
        object.__setattr__(self, "theta", float(self.theta))
        object.__setattr__(self, "vartheta", float(self.vartheta))
        if not (self.eps_theta < self.theta < 1.0 / self.eps_theta):
            raise ValidationError(
                f"theta={self.theta!r} outside ({self.eps_theta}, {1.0 / self.eps_theta})"
            )
        if self.copula is Copula.PRODUCT:
            if self.vartheta != 0.0:
                raise ValidationError("vartheta must be 0 for the product copula")
        elif not (self.eps_vartheta - 1.0 < self.vartheta < 1.0 - self.eps_vartheta):
            raise ValidationError(f"vartheta={self.vartheta!r} outside (-1, 1)")

    @classmethod
    def product(cls, theta: float, **kw) -> "ModelParams":
        return cls(Copula.PRODUCT, theta, 0.0, **kw)

    @classmethod
    def fgm(cls, theta: float, vartheta: float, **kw) -> "ModelParams":
        return cls(Copula.FGM, theta, vartheta, **kw)

    @property
    def dim(self) -> int:
        """Number of estimated parameters."""
        return 1 if self.copula is Copula.PRODUCT else 2

    @property
    def vector(self) -> np.ndarray:
        if self.copula is Copula.PRODUCT:
            return np.array([self.theta])
        return np.array([self.theta, self.vartheta])

    def with_vector(self, vec) -> "ModelParams":
        vec = np.atleast_1d(np.asarray(vec, dtype=float))
        if self.copula is Copula.PRODUCT:
            return ModelParams(self.copula, vec[0], 0.0, self.eps_theta, self.eps_vartheta)
        return ModelParams(self.copula, vec[0], vec[1], self.eps_theta, self.eps_vartheta)


def kendall_tau(vartheta: float) -> float:
    if not abs(vartheta) < 1:
        raise ValidationError("|vartheta| must be < 1")
    return 2.0 * vartheta / 9.0


def _dependence_factor(params: ModelParams, w: StudyWindow, x, t):
    """``(2 exp(-theta x) - 1)(1 - 2 t / G)``, the FGM modulation of the product density."""
    return (2.0 * np.exp(-params.theta * x) - 1.0) * (1.0 - 2.0 * t / w.G)


def density(params: ModelParams, w: StudyWindow, x, t):
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    th = params.theta
    base = th / w.G * np.exp(-th * x)
    if params.vartheta != 0.0:
        base = base * (1.0 + params.vartheta * _dependence_factor(params, w, x, t))
    inside = (x >= 0) & (t >= 0) & (t <= w.G)
    out = np.where(inside, base, 0.0)
    return float(out) if out.ndim == 0 else out


# --- selection probability -------------------------------------------------

def _alpha_terms(theta: float, w: StudyWindow):
    """Return ``(base, dep, dbase, ddep)``: alpha = base + vartheta * dep and theta-derivatives."""
    G, s, th = w.G, w.s, theta
    es, eG = math.exp(-th * s), math.exp(-th * G)
    A, B = -math.expm1(-th * s), -math.expm1(-th * G)
    A2, B2 = -math.expm1(-2 * th * s), -math.expm1(-2 * th * G)
    dA, dB = s * es, G * eG
    dA2, dB2 = 2 * s * es * es, 2 * G * eG * eG

    base = A * B / (G * th)
    dbase = (dA * B + A * dB) / (G * th) - A * B / (G * th * th)

    br1 = A * (1 + eG) / th - A2 * (1 + eG * eG) / (2 * th)
    dbr1 = (-A * (1 + eG) / th**2 + (dA * (1 + eG) - A * G * eG) / th
            + A2 * (1 + eG * eG) / (2 * th**2)
            - (dA2 * (1 + eG * eG) - A2 * 2 * G * eG * eG) / (2 * th))
    br2 = A * B / th**2 - A2 * B2 / (4 * th**2)
    dbr2 = (-2 * A * B / th**3 + (dA * B + A * dB) / th**2
            + A2 * B2 / (2 * th**3) - (dA2 * B2 + A2 * dB2) / (4 * th**2))

    dep = -br1 / G + 2 * br2 / G**2
    ddep = -dbr1 / G + 2 * dbr2 / G**2
    return base, dep, dbase, ddep


def alpha(params: ModelParams, w: StudyWindow) -> float:
    """Probability that a latent unit falls in ``D``."""
    base, dep, _, _ = _alpha_terms(params.theta, w)
    value = base + params.vartheta * dep if params.copula is Copula.FGM else base
    if not 0.0 < value < 1.0:
        raise NumericalError(f"selection probability {value!r} outside (0, 1)")
    return value


def alpha_grad(params: ModelParams, w: StudyWindow) -> np.ndarray:
    """Gradient of ``alpha``; length 1 (product) or 2 (FGM, ``(d/dtheta, d/dvartheta)``)."""
    _, dep, dbase, ddep = _alpha_terms(params.theta, w)
    if params.copula is Copula.PRODUCT:
        return np.array([dbase])
    return np.array([dbase + params.vartheta * ddep, dep])


# --- scores ----------------------------------------------------------------

def _score_raw(params: ModelParams, w: StudyWindow, x, t, a=None, da=None):
    """Score without the indicator of D, shape ``x.shape + (dim,)``."""
    if a is None:
        a = alpha(params, w)
        da = alpha_grad(params, w)
    th = params.theta
    if params.copula is Copula.PRODUCT:
        # sign as in the estimating equation sum(x - 1/theta + alpha'/alpha) = 0
        return (x - 1.0 / th + da[0] / a)[..., None]
    vt = params.vartheta
    e = np.exp(-th * x)
    tfac = 1.0 - 2.0 * t / w.G
    dep = (2.0 * e - 1.0) * tfac
    denom = 1.0 + vt * dep
    s1 = 1.0 / th - x - 2.0 * vt * x * e * tfac / denom - da[0] / a
    s2 = dep / denom - da[1] / a
    return np.stack([s1, s2], axis=-1)


def score(params: ModelParams, w: StudyWindow, x, t) -> np.ndarray:
    """Score vector at ``(x, t)``; zero outside ``D``.

    Product copula: ``x - 1/theta + alpha'/alpha``.  FGM: the gradient of
    ``log f - log alpha``.  The two differ in sign convention; every quantity
    built from them (Z-estimates, ``psi psi^T``, influence functions) is
    invariant to that sign.
    """
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    raw = _score_raw(params, w, x, t)
    return np.where(np.asarray(in_support(w, x, t))[..., None], raw, 0.0)


def score_sign(params: ModelParams) -> float:
    """+1 if ``score`` is the log-likelihood gradient, -1 if it is its negative."""
    return -1.0 if params.copula is Copula.PRODUCT else 1.0


def _q(a: float) -> float:
    """``1/a^2 - 1/(4 sinh^2(a/2))``, stable near zero."""
    if a < 1e-2:
        return 1.0 / 12.0 - a * a / 240.0 + a**4 / 6048.0
    return 1.0 / (a * a) - 0.25 / math.sinh(0.5 * a) ** 2


def fisher_info(params: ModelParams, w: StudyWindow, *, tol: float = 1e-10) -> np.ndarray:
    """``E[psi psi^T]`` over ``D`` under the latent law (``dim x dim``)."""
    if params.copula is Copula.PRODUCT:
        th = params.theta
        # alpha * (2/theta^2 - s^2 e^{-theta s}/(1-e^{-theta s})^2 - G^2 e^{-G theta}/(1-e^{-G theta})^2)
        info = alpha(params, w) * (w.s**2 * _q(th * w.s) + w.G**2 * _q(th * w.G))
        mat = np.array([[info]])
    else:
        a = alpha(params, w)
        da = alpha_grad(params, w)

        def integrand(x, t):
            sc = _score_raw(params, w, x, t, a, da)
            f = density(params, w, x, t)
            return (sc[..., :, None] * sc[..., None, :]) * f[..., None, None]

        mat = support_integral(integrand, w, tol=tol)
        mat = 0.5 * (mat + mat.T)
    eig = np.linalg.eigvalsh(mat)
    if eig[0] <= 1e-12 * max(eig[-1], 1e-300):
        raise NumericalError(f"information matrix not positive definite (eigenvalues {eig})")
    return mat


def expected_score_derivative(params: ModelParams, w: StudyWindow) -> np.ndarray:
    """``E[d psi / d theta]`` via the information-matrix equality, in the sign convention of ``score``."""
    return -score_sign(params) * fisher_info(params, w)


def influence(params: ModelParams, w: StudyWindow, x, t) -> np.ndarray:
    """Influence function ``phi = -(E psi')^{-1} psi`` of the Z-estimator."""
    jac = expected_score_derivative(params, w)
    return score(params, w, x, t) @ (-np.linalg.inv(jac)).T
