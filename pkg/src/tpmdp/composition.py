"""Per-party budget arithmetic for running several threshold mechanisms in sequence.

All composed mechanisms must share the same threshold ``t`` and party set;
composition happens party by party.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

from .calibration import PrivacyBudget


class CompositionMode(enum.Enum):
    BASIC = "basic"
    ADVANCED = "advanced"


@dataclass(frozen=True)
class CompositionRequest:
    """``budgets[k][i]`` is party i's budget under mechanism k."""

    budgets: tuple[tuple[PrivacyBudget, ...], ...]
    mode: CompositionMode = CompositionMode.BASIC
    delta_prime: tuple[float, ...] | None = None  # advanced only, one per party
    thresholds: tuple[int, ...] | None = None  # optional per-mechanism t, must agree

    def __post_init__(self):
        budgets = tuple(tuple(row) for row in self.budgets)
        object.__setattr__(self, "budgets", budgets)
        if not budgets:
            raise ValueError("need at least one mechanism")
        n = len(budgets[0])
        if any(len(row) != n for row in budgets):
            raise ValueError("every mechanism must list a budget for every party")
        if self.thresholds is not None and len(set(self.thresholds)) > 1:
            raise ValueError(f"composed mechanisms must share one threshold, got {sorted(set(self.thresholds))}")
        if self.mode is CompositionMode.ADVANCED:
            if self.delta_prime is None or len(self.delta_prime) != n:
                raise ValueError("advanced composition needs one delta_prime per party")
            if any(not dp > 0 for dp in self.delta_prime):
                raise ValueError("delta_prime must be > 0")
            for i in range(n):
                if len({budgets[k][i] for k in range(len(budgets))}) > 1:
                    raise ValueError(f"advanced composition needs identical budgets per party; party {i} differs")

    @property
    def m(self) -> int:
        return len(self.budgets)

    @property
    def n(self) -> int:
        return len(self.budgets[0])


def _budget(eps: float, delta: float) -> PrivacyBudget:
    # A delta of 1 or more promises nothing; report it as exactly 1.
    return PrivacyBudget(eps, min(delta, 1.0))


def compose_basic(budgets: Sequence[Sequence[PrivacyBudget]]) -> list[PrivacyBudget]:
    """Sum epsilons and deltas party by party."""
    req = CompositionRequest(budgets)
    return [
        _budget(math.fsum(row[i].epsilon for row in req.budgets), math.fsum(row[i].delta for row in req.budgets))
        for i in range(req.n)
    ]


def compose_advanced(epsilon: float, delta: float, m: int, delta_prime: float) -> PrivacyBudget:
    """Budget of m-fold composition of one (epsilon, delta) mechanism, with slack ``delta_prime``.

    epsilon' = sqrt(2 m ln(1/delta')) * epsilon + m * epsilon * (e^epsilon - 1),
    delta'' = m * delta + delta'.
    """
    if not delta_prime > 0:
        raise ValueError("delta_prime must be > 0")
    if m < 1:
        raise ValueError("m must be >= 1")
    PrivacyBudget(epsilon, delta)
    eps = math.sqrt(2.0 * m * math.log(1.0 / delta_prime)) * epsilon + m * epsilon * math.expm1(epsilon)
    return _budget(eps, m * delta + delta_prime)


def compose(req: CompositionRequest) -> list[PrivacyBudget]:
    if req.mode is CompositionMode.BASIC:
        return compose_basic(req.budgets)
    first = req.budgets[0]
    return [compose_advanced(b.epsilon, b.delta, req.m, dp) for b, dp in zip(first, req.delta_prime)]
