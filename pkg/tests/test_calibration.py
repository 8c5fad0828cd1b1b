import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tpmdp.calibration import (
    CalibrationError,
    CalibrationTriple,
    PrivacyBudget,
    QueryKind,
    classical_sigma,
    partial_sensitivity,
    privacy_profile,
    sigma_gamma,
    sigma_gamma_array,
    standard_normal_cdf,
)

# Reference noise levels from a 40-digit mpmath bisection of the same profile equation.
MPMATH_SIGMA = [
    (1.0, 1e-5, 3.7306316348159418),
    (0.1, 1e-6, 36.304690426195783),
    (0.5, 1e-3, 4.6101279507281402),
    (0.01, 1e-4, 172.57399571597533),
]


def test_normal_cdf_matches_mpmath():
    assert standard_normal_cdf(1.0) == pytest.approx(0.84134474606854295, rel=1e-15)
    assert standard_normal_cdf(0.0) == 0.5
    assert standard_normal_cdf(-30.0) == pytest.approx(4.906713927148187e-198, rel=1e-12)


@pytest.mark.parametrize("eps,delta,expected", MPMATH_SIGMA)
def test_sigma_matches_high_precision_oracle(eps, delta, expected):
    got = sigma_gamma(CalibrationTriple.of(eps, delta)).sigma
    assert got == pytest.approx(expected, rel=1e-10)


def test_profile_is_decreasing_in_sigma():
    triple = CalibrationTriple.of(0.5, 1e-5)
    sigmas = np.linspace(0.5, 20, 50)
    values = [privacy_profile(s, triple) for s in sigmas]
    assert all(a >= b for a, b in zip(values, values[1:]))


def test_profile_at_zero_epsilon_is_total_variation():
    # With eps = 0 the profile is 2 Phi(1 / (2 sigma)) - 1.
    triple = CalibrationTriple.of(0.0, 0.5)
    assert privacy_profile(1.0, triple) == pytest.approx(2 * standard_normal_cdf(0.5) - 1, rel=1e-12)


def test_profile_rejects_nonpositive_sigma():
    with pytest.raises(ValueError):
        privacy_profile(0.0, CalibrationTriple.of(1.0, 1e-5))


def test_delta_one_needs_no_noise():
    assert sigma_gamma(CalibrationTriple.of(1.0, 1.0)).sigma == 0.0


@pytest.mark.parametrize("eps,delta", [(-0.1, 1e-5), (1.0, 0.0), (1.0, 1.5), (math.nan, 1e-5)])
def test_budget_validation(eps, delta):
    with pytest.raises((ValueError, CalibrationError)):
        sigma_gamma(CalibrationTriple.of(eps, delta))


def test_budget_dataclass_rejects_negative_epsilon():
    with pytest.raises(ValueError):
        PrivacyBudget(-1.0, 1e-5)


def test_vectorised_matches_scalar():
    eps = np.array([0.05, 0.3, 1.0])
    delta = np.array([1e-6, 1e-5, 1e-4])
    vec = sigma_gamma_array(eps, delta, 2.5)
    for e, d, s in zip(eps, delta, vec):
        assert s == sigma_gamma(CalibrationTriple.of(e, d, 2.5)).sigma


@settings(max_examples=200, deadline=None)
@given(
    eps=st.floats(1e-3, 1.0),
    log_delta=st.floats(-8, -2),
    sens=st.floats(0.1, 50.0),
)
def test_tight_linear_and_below_classical(eps, log_delta, sens):
    delta = 10.0 ** log_delta
    triple = CalibrationTriple.of(eps, delta, sens)
    result = sigma_gamma(triple)
    prof = privacy_profile(result.sigma, triple)
    assert delta * (1 - 1e-6) <= prof <= delta
    unit = sigma_gamma(CalibrationTriple.of(eps, delta, 1.0)).sigma
    assert result.sigma == pytest.approx(sens * unit, rel=1e-12)
    assert result.sigma <= classical_sigma(eps, delta, sens)


def test_partial_sensitivity():
    assert partial_sensitivity(QueryKind.COUNT) == 1.0
    assert partial_sensitivity("linreg", 4) == pytest.approx(math.sqrt(2 * 16 + 60))
    with pytest.raises(ValueError):
        partial_sensitivity(QueryKind.LINREG, 0)
