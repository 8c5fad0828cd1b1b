"""Gaussian-mechanism calibration.

Finds the smallest noise standard deviation for which additive
``N(0, sigma^2 I)`` noise on a query with l2-sensitivity ``Delta`` is
``(epsilon, delta)``-DP, using the exact (analytic) privacy profile rather
than the classical ``sqrt(2 ln(1.25/delta))`` bound.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

DEFAULT_REL_TOL = 1e-12
# Bracket expansion steps; 2**1100 overflows doubles, so this is also a hard cap.
_MAX_BRACKET_STEPS = 1100
_MAX_BISECTION_STEPS = 200
_MAX_NUDGES = 64


class CalibrationError(ArithmeticError):
    """Raised when the root finder cannot bracket or converge."""


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float

    def __post_init__(self):
        if not (self.epsilon >= 0 and math.isfinite(self.epsilon)):
            raise ValueError(f"epsilon must be finite and >= 0, got {self.epsilon}")
        if not (0.0 <= self.delta <= 1.0):
            raise ValueError(f"delta must lie in [0, 1], got {self.delta}")


@dataclass(frozen=True)
class CalibrationTriple:
    budget: PrivacyBudget
    sensitivity: float

    def __post_init__(self):
        if not (self.sensitivity > 0 and math.isfinite(self.sensitivity)):
            raise ValueError(f"sensitivity must be finite and > 0, got {self.sensitivity}")

    @classmethod
    def of(cls, epsilon: float, delta: float, sensitivity: float = 1.0) -> "CalibrationTriple":
        return cls(PrivacyBudget(epsilon, delta), sensitivity)


@dataclass(frozen=True)
class CalibratedSigma:
    sigma: float
    achieved_delta: float


def standard_normal_cdf(x):
    """Phi(x), evaluated through erfc so both tails keep full relative precision.

    Accepts a scalar or an array; scalars come back as ``float``.
    """
    out = 0.5 * special.erfc(-np.asarray(x, dtype=float) / math.sqrt(2.0))
    return float(out) if np.ndim(out) == 0 else out


def _profile_scaled(s, epsilon):
    # Profile as a function of s = sigma / Delta; the condition only depends on this ratio.
    s = np.asarray(s, dtype=float)
    eps = np.asarray(epsilon, dtype=float)
    a = 0.5 / s - eps * s
    b = -0.5 / s - eps * s
    first = standard_normal_cdf(a)
    # exp(eps) * Phi(b) in log space: exp(eps) overflows long before Phi(b) underflows.
    second = np.exp(eps + special.log_ndtr(b))
    return np.asarray(first - second)


def privacy_profile(sigma: float, triple: CalibrationTriple) -> float:
    """Smallest delta for which N(0, sigma^2) noise is (epsilon, delta)-DP at this sensitivity."""
    if not sigma > 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    value = float(_profile_scaled(sigma / triple.sensitivity, triple.budget.epsilon))
    return min(max(value, 0.0), 1.0)


def _solve_scaled(epsilon: np.ndarray, delta: np.ndarray, rel_tol: float) -> np.ndarray:
    """Minimal s = sigma/Delta with profile(s) <= delta, elementwise."""
    lo = np.ones_like(epsilon)
    hi = np.ones_like(epsilon)
    ok = _profile_scaled(hi, epsilon) <= delta
    # Satisfied at s=1: halve until the lower end violates. Otherwise double upward.
    need_down = ok.copy()
    need_up = ~ok
    for _ in range(_MAX_BRACKET_STEPS):
        if not (need_down.any() or need_up.any()):
            break
        if need_down.any():
            lo[need_down] *= 0.5
            still = _profile_scaled(lo[need_down], epsilon[need_down]) <= delta[need_down]
            idx = np.flatnonzero(need_down)
            hi[idx[still]] = lo[idx[still]]
            need_down[idx[~still]] = False
        if need_up.any():
            hi[need_up] *= 2.0
            done = _profile_scaled(hi[need_up], epsilon[need_up]) <= delta[need_up]
            idx = np.flatnonzero(need_up)
            lo[idx[~done]] = hi[idx[~done]]
            need_up[idx[done]] = False
    else:
        raise CalibrationError("could not bracket the calibration root (degenerate epsilon/delta?)")

    active = (hi - lo) > rel_tol * hi
    for _ in range(_MAX_BISECTION_STEPS):
        if not active.any():
            return hi
        idx = np.flatnonzero(active)
        mid = 0.5 * (lo[idx] + hi[idx])
        sat = _profile_scaled(mid, epsilon[idx]) <= delta[idx]
        hi[idx[sat]] = mid[sat]
        lo[idx[~sat]] = mid[~sat]
        active[idx] = (hi[idx] - lo[idx]) > rel_tol * hi[idx]
    raise CalibrationError("bisection did not reach the requested tolerance")


def sigma_gamma_array(epsilon, delta, sensitivity=1.0, rel_tol: float = DEFAULT_REL_TOL) -> np.ndarray:
    """Vectorised :func:`sigma_gamma`; returns sigma values only.

    ``epsilon``, ``delta`` and ``sensitivity`` broadcast against each other.
    """
    eps, dlt, sens = np.broadcast_arrays(
        np.asarray(epsilon, dtype=float), np.asarray(delta, dtype=float), np.asarray(sensitivity, dtype=float)
    )
    eps, dlt, sens = eps.ravel().copy(), dlt.ravel().copy(), sens.ravel().copy()
    if np.any(eps < 0) or not np.all(np.isfinite(eps)):
        raise ValueError("epsilon must be finite and >= 0")
    if np.any(dlt <= 0) or np.any(dlt > 1):
        raise ValueError("delta must lie in (0, 1]; pure-epsilon Gaussian noise does not exist")
    if np.any(sens <= 0):
        raise ValueError("sensitivity must be > 0")
    if not 0 < rel_tol < 1:
        raise ValueError("rel_tol must lie in (0, 1)")

    out = np.zeros_like(eps)
    todo = dlt < 1.0
    if todo.any():
        e, d, dd = eps[todo], dlt[todo], sens[todo]
        sig = _solve_scaled(e, d, rel_tol) * dd
        # Rescaling by the sensitivity can land a few ulps on the wrong side of a
        # profile that is itself only accurate to ~1e-11; step up until it holds.
        for _ in range(_MAX_NUDGES):
            bad = _profile_scaled(sig / dd, e) > d
            if not bad.any():
                break
            sig[bad] = np.nextafter(sig[bad], np.inf) * (1.0 + 4 * np.finfo(float).eps)
        out[todo] = sig
    shape = np.broadcast(np.asarray(epsilon), np.asarray(delta), np.asarray(sensitivity)).shape
    return out.reshape(shape)


def sigma_gamma(triple: CalibrationTriple, rel_tol: float = DEFAULT_REL_TOL) -> CalibratedSigma:
    """Minimal sigma satisfying the analytic Gaussian condition for ``triple``.

    The result satisfies the profile and ``sigma * (1 - rel_tol)`` does not.
    ``delta == 1`` needs no noise and returns ``sigma == 0``.
    """
    budget = triple.budget
    if budget.delta == 0:
        raise ValueError("delta must be > 0; pure-epsilon Gaussian noise does not exist")
    if budget.delta == 1:
        return CalibratedSigma(0.0, 1.0)
    sigma = float(sigma_gamma_array(budget.epsilon, budget.delta, triple.sensitivity, rel_tol))
    return CalibratedSigma(sigma, privacy_profile(sigma, triple))


def classical_sigma(epsilon: float, delta: float, sensitivity: float = 1.0) -> float:
    """Textbook bound Delta * sqrt(2 ln(1.25/delta)) / epsilon (valid for epsilon <= 1)."""
    return sensitivity * math.sqrt(2.0 * math.log(1.25 / delta)) / epsilon


class QueryKind(enum.Enum):
    COUNT = "count"
    LINREG = "linreg"


def partial_sensitivity(query: QueryKind | str, dims: int = 1) -> float:
    """Per-party l2-sensitivity of the built-in queries.

    Count: each party holds one bit, so 1. Linear regression through the
    functional mechanism: the perturbed coefficient vector for ``dims``
    features moves by at most ``sqrt(2 d^2 + 15 d)``.
    """
    query = QueryKind(query)
    if query is QueryKind.COUNT:
        return 1.0
    if query is QueryKind.LINREG:
        if dims < 1:
            raise ValueError("dims must be a positive integer")
        return math.sqrt(2 * dims * dims + 15 * dims)
    raise ValueError(f"unsupported query kind {query!r}")
