"""Noise allocation for threshold multi-party Gaussian mechanisms with personalised budgets."""
from .allocator import (
    Allocation,
    FeasibilityReport,
    Subcase,
    SubcaseTag,
    ThresholdInstance,
    allocate,
    baseline_min_centralized,
    baseline_non_threshold,
    baseline_tmdp,
    feasibility_check,
    optimal_value,
    subcase_of,
    xi,
)
from .calibration import (
    CalibratedSigma,
    CalibrationTriple,
    PrivacyBudget,
    QueryKind,
    partial_sensitivity,
    privacy_profile,
    sigma_gamma,
    sigma_gamma_array,
)
from .composition import CompositionMode, CompositionRequest, compose, compose_advanced, compose_basic
from .config import ExperimentConfig, load_config
from .lp_oracle import constraint_census, enumerate_constraints, solve_exact, solve_with_certificate

__version__ = "0.1.0"
