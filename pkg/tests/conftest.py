import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from scipy import integrate

from dtgof.geometry import StudyWindow
from dtgof.model import ModelParams, density

settings.register_profile(
    "default", max_examples=40, deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

REF_WINDOW = StudyWindow(24.0, 3.0)
SMALL_WINDOW = StudyWindow(2.0, 1.0)


def dblquad_region(func, w: StudyWindow, x: float, t: float, tol: float = 1e-12) -> float:
    """Integrate ``func(x', t')`` over ``[0, x] x [0, t] ∩ D`` with scipy's adaptive rule.

    The outer variable is ``t'``; for each ``t'`` the inner range is
    ``[t', min(t' + s, x)]``.  Split at ``x - s`` where the upper limit kinks.
    """
    top = min(t, x, w.G)
    if top <= 0:
        return 0.0
    knots = [0.0] + [k for k in (x - w.s,) if 0.0 < k < top] + [top]
    total = 0.0
    for lo, hi in zip(knots[:-1], knots[1:]):
        val, _ = integrate.dblquad(
            lambda xx, tt: func(xx, tt), lo, hi,
            lambda tt: tt, lambda tt: min(tt + w.s, x),
            epsabs=tol, epsrel=tol,
        )
        total += val
    return total


def prob_region(params: ModelParams, w: StudyWindow, x: float, t: float) -> float:
    return dblquad_region(lambda xx, tt: float(density(params, w, xx, tt)), w, x, t)


def central_diff(fun, params: ModelParams, rel: float = 1e-6):
    """Central differences of ``fun(params)`` w.r.t. ``params.vector``."""
    v = params.vector
    out = []
    for k in range(v.size):
        h = rel * max(abs(v[k]), 1e-2) if k == 0 else rel
        e = np.zeros_like(v)
        e[k] = h
        out.append((fun(params.with_vector(v + e)) - fun(params.with_vector(v - e))) / (2 * h))
    return np.array(out)


def random_params(rng: np.random.Generator, w: StudyWindow) -> ModelParams:
    """Draws covering rates with ``theta * (G + s)`` between 0.2 and 8."""
    theta = math.exp(rng.uniform(math.log(0.2), math.log(8.0))) / w.x_max
    if rng.random() < 0.5:
        return ModelParams.product(theta)
    return ModelParams.fgm(theta, rng.uniform(-0.95, 0.95))


def random_rect_point(rng: np.random.Generator, w: StudyWindow) -> tuple[float, float]:
    return float(rng.uniform(0, w.x_max)), float(rng.uniform(0, w.G))


@pytest.fixture
def ref_window():
    return REF_WINDOW


@pytest.fixture
def small_window():
    return SMALL_WINDOW
