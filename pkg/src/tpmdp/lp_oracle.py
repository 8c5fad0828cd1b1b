"""Brute-force reference for the variance-allocation LP.

Materialises every coalition constraint and solves the LP with a small
dense simplex, ignoring all structure the fast allocator relies on.  Only
meant for small ``n``; the row count grows like ``n * C(n-1, t)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from typing import Iterable, Iterator

import numpy as np

from .allocator import Allocation, ThresholdInstance

MAX_ENUMERATE_N = 22
MAX_SOLVE_N = 12


class OracleError(RuntimeError):
    """The reference solver produced something it could not certify."""


@dataclass(frozen=True)
class ConstraintRow:
    """``sum(variances[mask]) >= rhs``; ``mask`` is the complement of the coalition."""

    mask: tuple[bool, ...]
    rhs: float
    party: int

    @property
    def coalition(self) -> tuple[int, ...]:
        return tuple(i for i, inside in enumerate(self.mask) if not inside)


@dataclass(frozen=True, eq=False)
class ConstraintTable:
    masks: np.ndarray  # (rows, n) bool
    rhs: np.ndarray  # (rows,)
    parties: np.ndarray  # (rows,) party whose requirement the row encodes

    def __len__(self) -> int:
        return self.rhs.size

    def __iter__(self) -> Iterator[ConstraintRow]:
        for m, r, j in zip(self.masks, self.rhs, self.parties):
            yield ConstraintRow(tuple(bool(b) for b in m), float(r), int(j))

    def deduplicated(self) -> "ConstraintTable":
        """Keep one row per mask, with the largest right-hand side."""
        if len(self) == 0:
            return self
        keys = np.packbits(self.masks, axis=1)
        _, inverse = np.unique(keys, axis=0, return_inverse=True)
        inverse = inverse.ravel()
        best = np.full(inverse.max() + 1, -1)
        # Visit rows in increasing rhs so the last write per key wins with the max.
        for row in np.argsort(self.rhs, kind="stable"):
            best[inverse[row]] = row
        return ConstraintTable(self.masks[best], self.rhs[best], self.parties[best])


@lru_cache(maxsize=256)
def _coalitions(n: int, t: int) -> np.ndarray:
    table = np.zeros((math.comb(n, t), n), dtype=bool)
    for r, combo in enumerate(combinations(range(n), t)):
        table[r, list(combo)] = True
    table.setflags(write=False)
    return table


def enumerate_constraints(inst: ThresholdInstance, dedup: bool = False) -> ConstraintTable:
    """Every row of the LP: for each party j, each t-coalition without j that sees the output."""
    n, t = inst.n, inst.t
    if n > MAX_ENUMERATE_N:
        raise ValueError(f"instance too large to enumerate: n={n} > {MAX_ENUMERATE_N}")
    if t == 0 or inst.n_active == 0:
        return ConstraintTable(np.zeros((0, n), dtype=bool), np.zeros(0), np.zeros(0, dtype=np.int64))
    coal = _coalitions(n, t)
    sees = (coal & inst.active).any(axis=1)
    masks, rhs, parties = [], [], []
    need = inst.sigma_gamma ** 2
    for j in range(n):
        sel = sees & ~coal[:, j]
        k = int(np.count_nonzero(sel))
        if k:
            masks.append(~coal[sel])
            rhs.append(np.full(k, need[j]))
            parties.append(np.full(k, j, dtype=np.int64))
    if not masks:
        return ConstraintTable(np.zeros((0, n), dtype=bool), np.zeros(0), np.zeros(0, dtype=np.int64))
    table = ConstraintTable(np.vstack(masks), np.concatenate(rhs), np.concatenate(parties))
    return table.deduplicated() if dedup else table


def constraint_census(n: int, t: int, active_size: int) -> int:
    """Number of rows :func:`enumerate_constraints` would produce, without building them."""
    k = active_size
    if not (0 <= k <= n and 0 <= t <= max(n - 1, 0)):
        raise ValueError(f"invalid (n, t, active_size) = ({n}, {t}, {k})")
    if t == 0 or k == 0:
        return 0
    base = _comb(n - 1, t)
    return k * (base - _comb(n - k, t)) + (n - k) * (base - _comb(n - k - 1, t))


def _comb(a: int, b: int) -> int:
    return math.comb(a, b) if a >= 0 else 0


def _log10_comb(n: int, k: int) -> float:
    if k < 0 or k > n:
        return -math.inf
    return (math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)) / math.log(10)


def _log10_diff(a: float, b: float) -> float:
    # log10(10**a - 10**b) for a >= b
    if b == -math.inf:
        return a
    if b >= a:
        return -math.inf
    return a + math.log10(-math.expm1((b - a) * math.log(10)))


def constraint_census_log10(n: int, t: int, active_size: int) -> float:
    """log10 of :func:`constraint_census`, usable when the exact integer is too big to build."""
    k = active_size
    if t == 0 or k == 0:
        return -math.inf
    base = _log10_comb(n - 1, t)
    parts = [math.log10(k) + _log10_diff(base, _log10_comb(n - k, t))]
    if n - k:
        parts.append(math.log10(n - k) + _log10_diff(base, _log10_comb(n - k - 1, t)))
    top = max(parts)
    if top == -math.inf:
        return top
    return top + math.log10(sum(10 ** (p - top) for p in parts))


@dataclass(frozen=True, eq=False)
class Certificate:
    dual: np.ndarray  # one multiplier per (possibly deduplicated) row; rhs @ dual == total
    primal_residual: float  # max constraint violation, relative to max rhs
    dual_residual: float
    gap: float  # complementary-slackness residual, relative to max rhs
    pivots: int


_PIVOT_TOL = 1e-12
_CERT_TOL = 1e-8
_MAX_PIVOTS = 50_000


def _dual_simplex(masks: np.ndarray, rhs: np.ndarray) -> tuple[np.ndarray, np.ndarray, int]:
    """Solve max rhs.y s.t. masks.T y <= 1, y >= 0 by a dense tableau simplex.

    Returns (y, x, pivots) where x are the shadow prices of the n packing
    constraints, i.e. the primal solution of min 1.x s.t. masks x >= rhs, x >= 0.
    Dantzig pricing, falling back to Bland's rule after a run of degenerate pivots.
    """
    r, n = masks.shape
    tab = np.zeros((n, r + n + 1))
    tab[:, :r] = masks.T
    tab[:, r:r + n] = np.eye(n)
    tab[:, -1] = 1.0
    cost = np.concatenate((rhs, np.zeros(n)))
    basis = np.arange(r, r + n)
    reduced = cost.copy()  # c - c_B B^-1 A, with B = I initially and c_B = 0

    stalled = 0
    for pivots in range(_MAX_PIVOTS):
        candidates = np.flatnonzero(reduced > _PIVOT_TOL)
        if candidates.size == 0:
            break
        col = int(candidates[0]) if stalled > 2 * n else int(candidates[np.argmax(reduced[candidates])])
        column = tab[:, col]
        rows = np.flatnonzero(column > _PIVOT_TOL)
        if rows.size == 0:
            raise OracleError("dual LP unbounded: primal infeasible, which the allocation LP never is")
        ratios = tab[rows, -1] / column[rows]
        best = ratios.min()
        ties = rows[ratios <= best + _PIVOT_TOL * max(1.0, best)]
        row = int(ties[np.argmin(basis[ties])])
        stalled = stalled + 1 if best <= _PIVOT_TOL else 0

        tab[row] /= tab[row, col]
        factors = tab[:, col].copy()
        factors[row] = 0.0
        tab -= np.outer(factors, tab[row])
        reduced = reduced - reduced[col] * tab[row, :-1]
        basis[row] = col
    else:
        raise OracleError("simplex pivot limit reached")

    y = np.zeros(r + n)
    y[basis] = tab[:, -1]
    x = -reduced[r:]
    return y[:r], x, pivots


def solve_with_certificate(
    rows: ConstraintTable | Iterable[ConstraintRow], n: int, dedup: bool = False
) -> tuple[Allocation, Certificate]:
    """Exact LP optimum together with its optimality certificate.

    Raises :class:`OracleError` if primal/dual feasibility or complementary
    slackness cannot be certified to 1e-8 (relative to the largest rhs).
    """
    if n > MAX_SOLVE_N:
        raise ValueError(f"instance too large for the exact oracle: n={n} > {MAX_SOLVE_N}")
    table = rows if isinstance(rows, ConstraintTable) else _table_from_rows(rows, n)
    if dedup:
        table = table.deduplicated()
    if len(table) == 0 or float(table.rhs.max()) == 0.0:
        return Allocation.from_variances(np.zeros(n)), Certificate(np.zeros(len(table)), 0.0, 0.0, 0.0, 0)
    if table.masks.shape[1] != n:
        raise ValueError("constraint masks do not match n")

    scale = float(table.rhs.max())
    masks = table.masks.astype(float)
    b = table.rhs / scale
    y, x, pivots = _dual_simplex(masks, b)

    slack_p = masks @ x - b
    slack_d = 1.0 - masks.T @ y
    primal_res = float(max(0.0, -slack_p.min(), -x.min()))
    dual_res = float(max(0.0, -slack_d.min(), -y.min()))
    gap = abs(float(x.sum() - b @ y))
    if primal_res > _CERT_TOL or dual_res > _CERT_TOL or gap > _CERT_TOL:
        raise OracleError(
            f"could not certify optimum: primal {primal_res:.3g}, dual {dual_res:.3g}, gap {gap:.3g}"
        )
    alloc = Allocation.from_variances(np.clip(x, 0.0, None) * scale)
    # Dual feasibility does not involve the rhs, so y needs no rescaling.
    return alloc, Certificate(y, primal_res, dual_res, gap, pivots)


def solve_exact(rows: ConstraintTable | Iterable[ConstraintRow], n: int, dedup: bool = False) -> Allocation:
    """Exact minimum-total-variance allocation for an explicit constraint list."""
    return solve_with_certificate(rows, n, dedup=dedup)[0]


def _table_from_rows(rows: Iterable[ConstraintRow], n: int) -> ConstraintTable:
    rows = list(rows)
    if not rows:
        return ConstraintTable(np.zeros((0, n), dtype=bool), np.zeros(0), np.zeros(0, dtype=np.int64))
    masks = np.array([r.mask for r in rows], dtype=bool).reshape(len(rows), -1)
    return ConstraintTable(
        masks, np.array([r.rhs for r in rows], dtype=float), np.array([r.party for r in rows], dtype=np.int64)
    )


def oracle_optimum(inst: ThresholdInstance, dedup: bool = True) -> Allocation:
    """Convenience wrapper: enumerate then solve."""
    return solve_exact(enumerate_constraints(inst, dedup=dedup), inst.n)
