"""Seeded synthetic latent and truncated samples, plus a level/power harness.

Latent units are drawn by the conditional inverse method.  With ``V = T / G``
uniform, the FGM conditional CDF of ``U = F_X(X)`` given ``V = v`` is
``u (1 + a (1 - u))`` with ``a = vartheta (1 - 2 v)``; its root in ``[0, 1]``
is taken in the cancellation-free form ``2 w / ((1 + a) + sqrt((1 + a)^2 - 4 a w))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import EmptySample, ValidationError
from .geometry import ObservationSet, StudyWindow, in_support
from .model import ModelParams

LIFETIMES = ("exponential", "weibull2")


@dataclass(frozen=True)
class SimulationConfig:
    params: ModelParams
    window: StudyWindow
    latent_n: int
    seed: int
    replications: int = 1
    lifetime: str = "exponential"

    def __post_init__(self):
        if int(self.latent_n) != self.latent_n or self.latent_n < 1:
            raise ValidationError(f"latent_n must be a positive integer, got {self.latent_n!r}")
        if int(self.replications) != self.replications or self.replications < 1:
            raise ValidationError(f"replications must be a positive integer, got {self.replications!r}")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ValidationError(f"seed must be a non-negative integer, got {self.seed!r}")
        if self.lifetime not in LIFETIMES:
            raise ValidationError(f"lifetime must be one of {LIFETIMES}, got {self.lifetime!r}")


class LatentSample(NamedTuple):
    x: np.ndarray
    t: np.ndarray


def fgm_conditional_cdf(u, v, vartheta: float):
    """``P(U <= u | V = v)`` for the FGM copula."""
    u = np.asarray(u, dtype=float)
    return u * (1.0 + vartheta * (1.0 - 2.0 * np.asarray(v)) * (1.0 - u))


def fgm_conditional_inverse(w, v, vartheta: float):
    """Solve ``fgm_conditional_cdf(u, v) = w`` for ``u`` in ``[0, 1]``."""
    w = np.asarray(w, dtype=float)
    a = vartheta * (1.0 - 2.0 * np.asarray(v, dtype=float))
    b = 1.0 + a
    u = 2.0 * w / (b + np.sqrt(np.maximum(b * b - 4.0 * a * w, 0.0)))
    return np.where(np.abs(a) < 1e-10, w, u)


def sample_latent(cfg: SimulationConfig, rng: np.random.Generator | None = None) -> LatentSample:
    """Draw ``cfg.latent_n`` untruncated ``(X, T)`` pairs.

    ``rng`` defaults to a generator seeded with ``cfg.seed``.  With
    ``cfg.lifetime == "weibull2"`` the lifetime margin is Weibull with shape 2
    and the same mean ``1/theta``; the copula is unchanged.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    n = int(cfg.latent_n)
    G = cfg.window.G
    t = G * rng.random(n)
    w = rng.random(n)
    u = fgm_conditional_inverse(w, t / G, cfg.params.vartheta)
    e = -np.log1p(-u)
    if cfg.lifetime == "weibull2":
        x = np.sqrt(e) / (cfg.params.theta * math.gamma(1.5))
    else:
        x = e / cfg.params.theta
    return LatentSample(x, t)


def truncate(points, w: StudyWindow) -> ObservationSet:
    """Keep the points lying in ``D``; order is preserved."""
    if isinstance(points, LatentSample) or (isinstance(points, tuple) and len(points) == 2):
        x, t = (np.asarray(a, dtype=float) for a in points)
    else:
        arr = np.asarray(points, dtype=float).reshape(-1, 2)
        x, t = arr[:, 0], arr[:, 1]
    keep = np.asarray(in_support(w, x, t), dtype=bool).reshape(-1)
    if not keep.any():
        raise EmptySample("no observation falls in D")
    return ObservationSet(x[keep], t[keep], w, _checked=False)


@dataclass(frozen=True)
class LevelPowerResult:
    levels: tuple
    rejections: dict
    valid: int
    failed: int
    failures: dict
    statistics: np.ndarray = field(repr=False, compare=False)

    def rate(self, level: float) -> float:
        return self.rejections[level] / self.valid if self.valid else float("nan")

    def standard_error(self, level: float) -> float:
        p = self.rate(level)
        return math.sqrt(p * (1.0 - p) / self.valid) if self.valid else float("nan")

    def table(self) -> list[dict]:
        return [{"level": lv, "rejection_rate": self.rate(lv), "se": self.standard_error(lv),
                 "rejections": self.rejections[lv], "valid": self.valid}
                for lv in self.levels]


def run_level_power_study(cfg: SimulationConfig, grid, reps_cv: int, levels,
                          mode=None) -> LevelPowerResult:
    """Rejection frequencies of the full pipeline over ``cfg.replications`` samples.

    ``levels`` are nominal test levels (0.05 rejects above the 95% quantile).
    The hypothesised family is ``cfg.params.copula``; data follow
    ``cfg.params`` with lifetime margin ``cfg.lifetime``.  Replications whose
    estimation fails are counted in ``failures`` and left out of the rates.
    """
    from .critval import CovarianceMode, critical_value, decide, Decision
    from .errors import DtgofError
    from .estimation import estimate
    from .ksstat import ks_statistic

    levels = tuple(float(x) for x in levels)
    if not levels or not all(0.0 < x < 1.0 for x in levels):
        raise ValidationError(f"levels must lie in (0, 1), got {levels}")
    mode = CovarianceMode.EST_BOTH if mode is None else CovarianceMode.parse(mode)
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.replications)
    rejections = {lv: 0 for lv in levels}
    failures: dict[str, int] = {}
    stats = []
    for child in children:
        data_seq, cv_seq = child.spawn(2)
        try:
            obs = truncate(sample_latent(cfg, np.random.default_rng(data_seq)), cfg.window)
            est = estimate(obs, cfg.params.copula)
            stat = ks_statistic(obs, est.params).statistic
            cv = critical_value(est.params, cfg.window, grid, mode, [1.0 - lv for lv in levels],
                                reps_cv, int(cv_seq.generate_state(1)[0]))
        except DtgofError as exc:
            name = type(exc).__name__
            failures[name] = failures.get(name, 0) + 1
            continue
        stats.append(stat)
        for lv in levels:
            if decide(stat, cv.quantiles[1.0 - lv]) is Decision.REJECT:
                rejections[lv] += 1
    return LevelPowerResult(levels, rejections, len(stats), sum(failures.values()), failures,
                            np.asarray(stats))
