"""Goodness-of-fit testing for doubly truncated lifetime data with copula dependence."""

from .critval import (
    CovarianceMode,
    CriticalValueResult,
    Decision,
    GridSpec,
    covariance,
    covariance_matrix,
    critical_value,
    decide,
    simulate_sup,
)
from .datagen import SimulationConfig, run_level_power_study, sample_latent, truncate
from .errors import (
    BoundaryHit,
    DtgofError,
    EmptySample,
    FactorizationError,
    NoRoot,
    NumericalError,
    ValidationError,
)
from .estimation import EstimateResult, estimate, estimate_latent_n
from .expectations import expect_g, expect_g_grad, expect_g_min, expect_g_score
from .geometry import (
    ObservationSet,
    Point,
    StudyWindow,
    corner_points,
    edge_projections,
    in_support,
    intersection_points,
    region_case,
)
from .ksstat import (
    StatisticBreakdown,
    empirical_cdf,
    ks_statistic,
    ks_statistic_bruteforce,
    theoretical_obs_cdf,
)
from .model import Copula, ModelParams, alpha, alpha_grad, density, fisher_info, kendall_tau, score

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
