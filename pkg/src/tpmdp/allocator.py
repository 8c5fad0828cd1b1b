"""Optimal per-party noise variances for the threshold multi-party Gaussian mechanism.

Every party ``j`` needs the noise contributed by the parties *outside* any
coalition ``A`` (``|A| = t``, ``j`` not in ``A``, ``A`` containing at least one
party that sees the output) to reach ``sigma_gamma[j] ** 2``.  Minimising the
total variance under that exponentially large constraint family has a
closed-form solution that only needs a handful of order statistics, so
everything here runs in O(n) time and memory.

Party indices are 0-based throughout the library.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np


@dataclass(frozen=True, eq=False)
class ThresholdInstance:
    """LP input: required noise levels, collusion threshold, and output receivers.

    ``active`` may be ``None`` (every party receives the output), a boolean
    mask of length n, or an iterable of 0-based party indices.
    """

    sigma_gamma: np.ndarray
    t: int
    active: np.ndarray = field(default=None)

    def __post_init__(self):
        sg = np.array(self.sigma_gamma, dtype=float).ravel()
        n = sg.size
        if n < 1:
            raise ValueError("need at least one party")
        if np.any(sg < 0) or not np.all(np.isfinite(sg)):
            raise ValueError("sigma_gamma entries must be finite and >= 0")
        t = int(self.t)
        if t != self.t or not 0 <= t <= n - 1:
            raise ValueError(f"t must be an integer in [0, {n - 1}], got {self.t}")
        mask = _as_mask(self.active, n)
        sg.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "sigma_gamma", sg)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "active", mask)

    @property
    def n(self) -> int:
        return self.sigma_gamma.size

    @property
    def n_active(self) -> int:
        return int(np.count_nonzero(self.active))

    @property
    def active_indices(self) -> np.ndarray:
        return np.flatnonzero(self.active)

    def replace(self, *, sigma_gamma=None, t=None, active=None) -> "ThresholdInstance":
        return ThresholdInstance(
            self.sigma_gamma if sigma_gamma is None else sigma_gamma,
            self.t if t is None else t,
            self.active if active is None else active,
        )

    def __repr__(self):
        return f"ThresholdInstance(n={self.n}, t={self.t}, n_active={self.n_active})"


def _as_mask(active, n: int) -> np.ndarray:
    if active is None:
        return np.ones(n, dtype=bool)
    arr = np.asarray(active)
    if arr.dtype == bool:
        if arr.shape != (n,):
            raise ValueError(f"active mask must have shape ({n},), got {arr.shape}")
        return arr.copy()
    idx = np.asarray(list(active) if not isinstance(active, np.ndarray) else active, dtype=np.int64).ravel()
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ValueError(f"active party indices must lie in [0, {n - 1}]")
    mask = np.zeros(n, dtype=bool)
    mask[idx] = True
    return mask


@dataclass(frozen=True, eq=False)
class Allocation:
    variances: np.ndarray
    total: float

    @classmethod
    def from_variances(cls, variances: Iterable[float]) -> "Allocation":
        v = np.array(variances, dtype=float).ravel()
        # Rounding in sigma^2 - c * sigma_xi^2 can leave -1e-17 residue at ties.
        np.maximum(v, 0.0, out=v)
        v.setflags(write=False)
        return cls(v, float(v.sum()))

    @property
    def n(self) -> int:
        return self.variances.size


class SubcaseTag(enum.Enum):
    TRIVIAL = "trivial"
    S1 = "S1"
    S2 = "S2"
    S3 = "S3"
    S4 = "S4"


@dataclass(frozen=True)
class Subcase:
    tag: SubcaseTag
    alpha: float | None = None
    beta: float | None = None
    # S4 only: True when the inactive-heavy branch (t >= 2 and alpha > beta) applies.
    inactive_branch: bool | None = None


def xi(n: int, t: int) -> int:
    """Cut index min(floor((2n - t)/(n - t)), t + 1) for the all-active problem."""
    if not 1 <= t <= n - 1:
        raise ValueError(f"xi needs 1 <= t <= n - 1, got n={n}, t={t}")
    return min((2 * n - t) // (n - t), t + 1)


def _kth_largest(values: np.ndarray, k: int) -> float:
    # Linear-time selection (introselect); no sorting.
    n = values.size
    return float(np.partition(values, n - k)[n - k])


def _top_two(values: np.ndarray) -> tuple[float, float]:
    """Largest and second-largest entries; missing entries count as 0."""
    if values.size == 0:
        return 0.0, 0.0
    if values.size == 1:
        return float(values[0]), 0.0
    i = int(np.argmax(values))
    first = float(values[i])
    second = float(max(np.max(values[:i], initial=-np.inf), np.max(values[i + 1:], initial=-np.inf)))
    return first, second


def _full_variances(sg: np.ndarray, t: int) -> np.ndarray:
    n = sg.size
    k = xi(n, t)
    cut = _kth_largest(sg, k)
    cut_sq = cut * cut
    share = n - t
    return np.where(sg <= cut, cut_sq / share, sg * sg - (share - 1) / share * cut_sq)


def allocate_full(inst: ThresholdInstance) -> Allocation:
    """Optimal variances when every party receives the output (1 <= t <= n-1)."""
    if inst.n_active != inst.n:
        raise ValueError("allocate_full requires every party to be active")
    return Allocation.from_variances(_full_variances(inst.sigma_gamma, inst.t))


def classify_subcase(n: int, t: int, n_active: int) -> SubcaseTag:
    if n_active == 0 or t == 0:
        return SubcaseTag.TRIVIAL
    if n_active >= n - t + 1:
        return SubcaseTag.S1
    if n_active == 1:
        return SubcaseTag.S2
    if n - t * n_active <= 0:
        return SubcaseTag.S3
    return SubcaseTag.S4


def _s4_params(inst: ThresholdInstance) -> tuple[float, float]:
    act_1, act_2 = _top_two(inst.sigma_gamma[inst.active])
    ina_1, ina_2 = _top_two(inst.sigma_gamma[~inst.active])
    return max(ina_1, act_2), max(act_1, ina_2)


def subcase_of(inst: ThresholdInstance) -> Subcase:
    """Full subcase record, including the alpha/beta branch data for S4."""
    tag = classify_subcase(inst.n, inst.t, inst.n_active)
    if tag is not SubcaseTag.S4:
        return Subcase(tag)
    alpha, beta = _s4_params(inst)
    return Subcase(tag, alpha, beta, inst.t >= 2 and alpha > beta)


def allocate(inst: ThresholdInstance) -> Allocation:
    """Exact minimiser of total variance for any active set, in O(n)."""
    n, t, sg, act = inst.n, inst.t, inst.sigma_gamma, inst.active
    tag = classify_subcase(n, t, inst.n_active)

    if tag is SubcaseTag.TRIVIAL:
        return Allocation.from_variances(np.zeros(n))

    if tag in (SubcaseTag.S1, SubcaseTag.S3):
        return Allocation.from_variances(_full_variances(sg, t))

    out = np.zeros(n)
    inactive = ~act
    if tag is SubcaseTag.S2:
        # The sole receiver sits in every relevant coalition, so its noise never helps.
        rest = sg[inactive]
        if t >= 2:
            out[inactive] = _full_variances(rest, t - 1)
        else:
            top = float(rest.max())
            out[inactive] = top * top / (n - 1)
        return Allocation.from_variances(out)

    # S4
    alpha, beta = _s4_params(inst)
    denom = n - inst.n_active - t + 1
    if t == 1 or alpha <= beta:
        out[inactive] = alpha * alpha / denom
        out[act] = np.maximum(0.0, sg[act] ** 2 - alpha * alpha)
    else:
        out[inactive] = beta * beta / denom
        inactive_idx = np.flatnonzero(inactive)
        special = inactive_idx[int(np.argmax(sg[inactive_idx]))]
        out[special] = alpha * alpha - (denom - 1) / denom * beta * beta
    return Allocation.from_variances(out)


def _top_sum_sq(values: np.ndarray, count: int) -> float:
    """Sum of squares of the ``count`` largest entries, without sorting."""
    if count <= 0:
        return 0.0
    n = values.size
    part = np.partition(values, n - count)[n - count:]
    return float(np.dot(part, part))


def optimal_value(inst: ThresholdInstance) -> float:
    """Closed-form optimum of the total variance, computed independently of :func:`allocate`."""
    n, t, sg = inst.n, inst.t, inst.sigma_gamma
    tag = classify_subcase(n, t, inst.n_active)
    if tag is SubcaseTag.TRIVIAL:
        return 0.0
    if tag in (SubcaseTag.S1, SubcaseTag.S3):
        k = xi(n, t)
        cut = _kth_largest(sg, k)
        return _top_sum_sq(sg, k - 1) + ((2 * n - t) / (n - t) - k) * cut * cut
    if tag is SubcaseTag.S2:
        rest = sg[~inst.active]
        k = min((2 * n - t - 1) // (n - t), t)
        cut = _kth_largest(rest, k)
        return _top_sum_sq(rest, k - 1) + ((2 * n - t - 1) / (n - t) - k) * cut * cut
    first, second = _top_two(sg)
    return first * first + (t - 1) / (n - inst.n_active - t + 1) * second * second


@dataclass(frozen=True)
class FeasibilityReport:
    feasible: bool
    worst_party: int | None
    worst_slack: float
    worst_coalition: tuple[int, ...] | None
    slacks: np.ndarray

    def __bool__(self):
        return self.feasible


def feasibility_check(inst: ThresholdInstance, alloc: Allocation, slack_tol: float = 1e-9) -> FeasibilityReport:
    """Check every privacy constraint without enumerating coalitions.

    For party ``j`` the binding coalition removes the most variance: the ``t``
    largest variances among the other parties, swapping in the largest active
    party if that greedy pick contains no active party.  Slack is the
    remaining variance minus ``sigma_gamma[j]**2`` (``inf`` when ``j`` has no
    constraint at all).  Runs in O(n log n).
    """
    n, t = inst.n, inst.t
    v = np.asarray(alloc.variances, dtype=float)
    if v.size != n:
        raise ValueError(f"allocation has {v.size} entries, instance has {n} parties")
    slacks = np.full(n, np.inf)
    if t == 0 or inst.n_active == 0:
        return FeasibilityReport(True, None, float("inf"), None, slacks)

    act = inst.active
    need = inst.sigma_gamma ** 2
    order = np.argsort(-v, kind="stable")
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n)
    prefix = np.concatenate(([0.0], np.cumsum(v[order])))
    act_sorted = act[order]
    act_order = order[act_sorted]  # active parties by decreasing variance

    in_top = rank < t
    # Greedy removal: the t largest among the others.
    removed = np.where(in_top, prefix[t + 1] - v, prefix[t])
    act_count = np.where(in_top, np.count_nonzero(act_sorted[: t + 1]) - act, np.count_nonzero(act_sorted[:t]))
    smallest = np.where(in_top, v[order[t]], v[order[t - 1]])

    first_act = act_order[0]
    second_act = act_order[1] if act_order.size > 1 else -1
    best_act = np.full(n, first_act)
    best_act[first_act] = second_act
    constrained = best_act >= 0
    swap = (act_count == 0) & constrained
    removed = np.where(swap, removed - smallest + v[np.maximum(best_act, 0)], removed)
    slacks[constrained] = (v.sum() - removed - need)[constrained]

    tol = slack_tol * np.maximum(1.0, need)
    scaled = np.where(constrained, slacks / np.maximum(1.0, need), np.inf)
    worst = int(np.argmin(scaled))
    feasible = bool(np.all(slacks[constrained] >= -tol[constrained]))
    coalition = _binding_coalition(worst, t, order, act, act_order)
    return FeasibilityReport(feasible, worst, float(slacks[worst]), coalition, slacks)


def _binding_coalition(j: int, t: int, order, act, act_order) -> tuple[int, ...]:
    picked = order[order != j][:t]
    if not act[picked].any():
        best = act_order[act_order != j][0]
        picked = np.concatenate((picked[:-1], [best]))
    return tuple(int(i) for i in np.sort(picked))


def baseline_tmdp(inst: ThresholdInstance) -> Allocation:
    """Non-personalised threshold mechanism: every party gets the strictest requirement."""
    top = float(inst.sigma_gamma.max())
    return allocate(inst.replace(sigma_gamma=np.full(inst.n, top)))


def baseline_non_threshold(inst: ThresholdInstance) -> Allocation:
    """Ignore the collusion threshold (t = n - 1)."""
    if inst.t == 0 or inst.n_active == 0:
        return allocate(inst)
    return allocate(inst.replace(t=inst.n - 1))


def constrained_parties(inst: ThresholdInstance) -> np.ndarray:
    """Mask of parties with at least one privacy constraint."""
    if inst.t == 0 or inst.n_active == 0:
        return np.zeros(inst.n, dtype=bool)
    if inst.n_active >= 2:
        return np.ones(inst.n, dtype=bool)
    return ~inst.active


def baseline_min_centralized(inst: ThresholdInstance) -> float:
    """Variance a trusted curator would add once: the largest requirement among constrained parties."""
    mask = constrained_parties(inst)
    if not mask.any():
        return 0.0
    top = float(inst.sigma_gamma[mask].max())
    return top * top
