"""Simulated multi-party Gaussian mechanism and the comparison baselines.

The secure-computation layer is an ideal functionality: party noises are
summed directly onto the true query answer.  Randomness is drawn from
``numpy.random.Generator`` streams keyed by ``SeedSequence`` entropy tuples,
so identical seeds give bit-identical populations, draws and estimates.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .allocator import Allocation, ThresholdInstance
from .calibration import PrivacyBudget, QueryKind, partial_sensitivity, sigma_gamma_array
from .config import ExperimentConfig

# Second word of every SeedSequence entropy tuple; keeps streams for different purposes apart.
POPULATION_STREAM = 0
ACTIVE_STREAM = 1
RUN_STREAM = 2


def rng_for(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``(seed, *key)``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, key)]))


class Group(enum.IntEnum):
    CONSERVATIVE = 0
    MODERATE = 1
    LIBERAL = 2


@dataclass(frozen=True, eq=False)
class Population:
    groups: np.ndarray  # Group codes, one per party
    epsilon: np.ndarray
    delta: np.ndarray
    bits: np.ndarray | None = None  # count data
    features: np.ndarray | None = None  # (n, d) regression data in [-1, 1]
    labels: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.epsilon.size

    @property
    def budgets(self) -> list[PrivacyBudget]:
        return [PrivacyBudget(float(e), float(d)) for e, d in zip(self.epsilon, self.delta)]


def generate_population(config: ExperimentConfig, seed: int | None = None) -> Population:
    """Draw budget groups, per-party epsilons and the data records.

    Group sizes are ``round(f_C * n)`` and ``round(f_M * n)`` with liberals
    taking the rest; assignment to parties is a uniform random permutation.
    """
    seed = config.seed if seed is None else seed
    n = config.n_parties
    if not (0 <= config.f_C <= 1 and 0 <= config.f_M <= 1 and config.f_C + config.f_M <= 1 + 1e-12):
        raise ValueError("group fractions must lie in [0, 1] and sum to at most 1")
    rng = rng_for(seed, POPULATION_STREAM)

    n_c = int(round(config.f_C * n))
    n_m = min(int(round(config.f_M * n)), n - n_c)
    groups = np.full(n, Group.LIBERAL, dtype=np.int8)
    perm = rng.permutation(n)
    groups[perm[:n_c]] = Group.CONSERVATIVE
    groups[perm[n_c:n_c + n_m]] = Group.MODERATE

    eps = np.full(n, float(config.eps_L))
    cons = groups == Group.CONSERVATIVE
    mod = groups == Group.MODERATE
    eps[cons] = rng.uniform(config.eps_C, config.eps_M, size=int(cons.sum()))
    eps[mod] = rng.uniform(config.eps_M, config.eps_L, size=int(mod.sum()))
    delta = np.full(n, config.delta_value)

    if config.query == "count":
        bits = (rng.random(n) < config.rho).astype(np.int64)
        return Population(groups, eps, delta, bits=bits)

    d = config.features
    x = rng.uniform(-1.0, 1.0, size=(n, d))
    w_true = rng.uniform(-1.0, 1.0, size=d)
    y = x @ w_true + config.label_noise * rng.standard_normal(n)
    y = y / max(1.0, float(np.abs(y).max()))
    return Population(groups, eps, delta, features=x, labels=y)


def query_sensitivity(pop: Population) -> float:
    if pop.bits is not None:
        return partial_sensitivity(QueryKind.COUNT)
    return partial_sensitivity(QueryKind.LINREG, pop.features.shape[1])


def party_sigma_gamma(pop: Population) -> np.ndarray:
    """Required noise level of each party for this population's query."""
    return sigma_gamma_array(pop.epsilon, pop.delta, query_sensitivity(pop))


def draw_active_set(n: int, spec, seed: int) -> np.ndarray:
    """Resolve an active-set spec to a boolean mask.

    ``"all"``; ``"random"`` (uniform over non-empty subsets); ``"random:K"``
    (uniform K-subset); or an explicit list of 1-based party numbers.
    """
    if isinstance(spec, str):
        rng = rng_for(seed, ACTIVE_STREAM)
        if spec == "all":
            return np.ones(n, dtype=bool)
        if spec == "random":
            while True:
                mask = rng.random(n) < 0.5
                if mask.any():
                    return mask
        if spec.startswith("random:"):
            k = int(spec.split(":", 1)[1])
            mask = np.zeros(n, dtype=bool)
            mask[rng.choice(n, size=k, replace=False)] = True
            return mask
        raise ValueError(f"unknown active-set spec {spec!r}")
    mask = np.zeros(n, dtype=bool)
    mask[np.asarray(list(spec), dtype=np.int64) - 1] = True
    return mask


# --- query outputs -------------------------------------------------------------------------

def count_output(pop: Population, keep: np.ndarray | None = None) -> np.ndarray:
    bits = pop.bits if keep is None else pop.bits * keep
    return np.array([float(bits.sum())])


def linreg_statistics(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Upper triangle of D^T D followed by D^T y; sums over records, so shards add up."""
    d = x.shape[1]
    iu = np.triu_indices(d)
    return np.concatenate(((x.T @ x)[iu], x.T @ y))


def _unpack_statistics(vec: np.ndarray, d: int) -> tuple[np.ndarray, np.ndarray]:
    iu = np.triu_indices(d)
    m = len(iu[0])
    dtd = np.zeros((d, d))
    dtd[iu] = vec[:m]
    dtd = dtd + np.triu(dtd, 1).T
    return dtd, vec[m:]


def linreg_noise_scale(d: int) -> np.ndarray:
    """Per-coordinate std multiplier: 1 on the D^T D entries, 1/2 on D^T y."""
    m = d * (d + 1) // 2
    return np.concatenate((np.ones(m), np.full(d, 0.5)))


# --- the mechanism -----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MechanismRun:
    true_output: np.ndarray
    released_output: np.ndarray
    noise_draws: np.ndarray  # (n, dim): row i is party i's noise vector
    receivers: np.ndarray  # boolean mask of U+
    seed: tuple[int, ...]

    def output_for(self, party: int) -> np.ndarray | None:
        """What party ``party`` learns; ``None`` stands for the no-information symbol."""
        return self.released_output if self.receivers[party] else None

    @property
    def error(self) -> np.ndarray:
        return self.released_output - self.true_output


def run_mechanism(
    true_output: np.ndarray,
    inst: ThresholdInstance,
    alloc: Allocation,
    seed: int | Sequence[int],
    coordinate_scale: np.ndarray | None = None,
) -> MechanismRun:
    """One execution: every party adds N(0, variance_i * scale^2) per coordinate.

    ``coordinate_scale`` lets vector queries give coordinates different noise
    multipliers (used by the functional mechanism); default is 1 everywhere.
    """
    true_output = np.atleast_1d(np.asarray(true_output, dtype=float))
    dim = true_output.size
    if alloc.n != inst.n:
        raise ValueError(f"allocation has {alloc.n} parties, instance has {inst.n}")
    scale = np.ones(dim) if coordinate_scale is None else np.asarray(coordinate_scale, dtype=float)
    if scale.shape != (dim,):
        raise ValueError(f"coordinate scale has shape {scale.shape}, query output has dimension {dim}")
    key = tuple(seed) if isinstance(seed, (tuple, list)) else (int(seed),)
    rng = rng_for(*key)
    std = np.sqrt(alloc.variances)
    draws = rng.standard_normal((inst.n, dim)) * std[:, None] * scale[None, :]
    released = true_output + draws.sum(axis=0)
    return MechanismRun(true_output, released, draws, inst.active.copy(), key)


def centralized_release(true_output: np.ndarray, variance: float, rng: np.random.Generator,
                        coordinate_scale: np.ndarray | None = None) -> np.ndarray:
    true_output = np.atleast_1d(np.asarray(true_output, dtype=float))
    scale = 1.0 if coordinate_scale is None else coordinate_scale
    return true_output + math.sqrt(variance) * scale * rng.standard_normal(true_output.size)


def solve_functional(stats: np.ndarray, d: int, sigma: float) -> np.ndarray:
    """Weights from (possibly perturbed) statistics: (D^T D + X1 + 4 sigma I)^-1 (D^T y + X2)."""
    dtd, dty = _unpack_statistics(np.asarray(stats, dtype=float), d)
    return np.linalg.solve(dtd + 4.0 * sigma * np.eye(d), dty)


def functional_linreg(x: np.ndarray, y: np.ndarray, sigma: float, seed: int | Sequence[int]) -> np.ndarray:
    """Centralised functional-mechanism regression at noise level ``sigma``.

    The upper triangle of the symmetric perturbation gets N(0, sigma^2)
    entries and the linear term N(0, sigma^2 / 4).  Raises
    ``numpy.linalg.LinAlgError`` if the perturbed system is singular.
    """
    d = x.shape[1]
    key = tuple(seed) if isinstance(seed, (tuple, list)) else (int(seed),)
    stats = linreg_statistics(x, y)
    noisy = stats + sigma * linreg_noise_scale(d) * rng_for(*key).standard_normal(stats.size)
    return solve_functional(noisy, d, sigma)


def least_squares(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.linalg.lstsq(x, y, rcond=None)[0]


# --- baselines ---------------------------------------------------------------------------------

def sample_threshold(pop: Population) -> float:
    """Threshold epsilon of the Sample mechanism: the mean party epsilon."""
    return float(pop.epsilon.mean())


def sampling_probabilities(epsilon: np.ndarray, eps_threshold: float) -> np.ndarray:
    eps = np.asarray(epsilon, dtype=float)
    return np.where(eps >= eps_threshold, 1.0, np.expm1(eps) / math.expm1(eps_threshold))


def baseline_sample(pop: Population, seed: int | Sequence[int], keep_mask: np.ndarray | None = None):
    """Personalised DP by sampling: drop stringent records, then one Gaussian at the threshold budget.

    Count populations return the noisy count (length-1 array).  Regression
    populations return functional-mechanism weights fitted on the sampled
    records (``keep_mask`` restricts to a training split first).
    """
    key = tuple(seed) if isinstance(seed, (tuple, list)) else (int(seed),)
    rng = rng_for(*key)
    eps_t = sample_threshold(pop)
    probs = sampling_probabilities(pop.epsilon, eps_t)
    kept = rng.random(pop.n) < probs
    if keep_mask is not None:
        kept &= keep_mask
    delta = float(pop.delta.min())
    sigma = float(sigma_gamma_array(eps_t, delta, query_sensitivity(pop)))
    if pop.bits is not None:
        return centralized_release(count_output(pop, kept), sigma * sigma, rng)
    d = pop.features.shape[1]
    stats = linreg_statistics(pop.features[kept], pop.labels[kept])
    noisy = stats + sigma * linreg_noise_scale(d) * rng.standard_normal(stats.size)
    return solve_functional(noisy, d, sigma)


def randomized_response_probability(epsilon) -> np.ndarray:
    eps = np.asarray(epsilon, dtype=float)
    return 1.0 / (1.0 + np.exp(-eps))


def baseline_randomized_response(pop: Population, seed: int | Sequence[int]) -> float:
    """Personalised randomized response on the bits, debiased per party; unbiased for the count."""
    if pop.bits is None:
        raise ValueError("randomized response needs binary count data")
    if np.any(pop.epsilon <= 0):
        raise ValueError("randomized response needs epsilon > 0 for every party")
    key = tuple(seed) if isinstance(seed, (tuple, list)) else (int(seed),)
    rng = rng_for(*key)
    p = randomized_response_probability(pop.epsilon)
    truthful = rng.random(pop.n) < p
    reports = np.where(truthful, pop.bits, 1 - pop.bits)
    return float(np.sum((reports - (1.0 - p)) / (2.0 * p - 1.0)))


def input_perturbation_linreg(pop: Population, seed: int | Sequence[int], keep_mask: np.ndarray | None = None) -> np.ndarray:
    """Local baseline for regression: each party perturbs its own record, then plain least squares.

    A record lives in [-1, 1]^(d+1), so its l2 diameter 2 sqrt(d+1) is the
    per-party sensitivity.
    """
    key = tuple(seed) if isinstance(seed, (tuple, list)) else (int(seed),)
    rng = rng_for(*key)
    d = pop.features.shape[1]
    sigma = sigma_gamma_array(pop.epsilon, pop.delta, 2.0 * math.sqrt(d + 1))
    noisy_x = pop.features + sigma[:, None] * rng.standard_normal((pop.n, d))
    noisy_y = pop.labels + sigma * rng.standard_normal(pop.n)
    if keep_mask is not None:
        noisy_x, noisy_y = noisy_x[keep_mask], noisy_y[keep_mask]
    return least_squares(noisy_x, noisy_y)


# --- evaluation --------------------------------------------------------------------------------

def evaluate_rmse(results: Sequence, truth=None) -> float:
    """Root mean squared error over runs.

    ``results`` holds :class:`MechanismRun` objects (error taken against
    their own true output) or plain estimates compared with ``truth``.
    """
    if len(results) == 0:
        raise ValueError("need at least one run")
    sq = []
    for r in results:
        if isinstance(r, MechanismRun):
            err = r.error
        else:
            if truth is None:
                raise ValueError("plain estimates need a truth value")
            err = np.asarray(r, dtype=float) - np.asarray(truth, dtype=float)
        sq.append(np.mean(np.square(err)))
    return float(math.sqrt(np.mean(sq)))


def fold_assignment(n: int, folds: int, rng: np.random.Generator) -> np.ndarray:
    return rng.permutation(np.arange(n) % folds)


def cross_validated_rmse(
    pop: Population,
    fit: Callable[[np.ndarray, int], np.ndarray],
    folds: int,
    rng: np.random.Generator,
) -> float:
    """Prediction RMSE over ``folds``-fold cross-validation.

    ``fit(train_mask, fold)`` returns weights trained on the parties in
    ``train_mask``; squared errors are pooled over all held-out parties.
    """
    assign = fold_assignment(pop.n, folds, rng)
    total = 0.0
    for k in range(folds):
        test = assign == k
        w = fit(~test, k)
        resid = pop.features[test] @ w - pop.labels[test]
        total += float(resid @ resid)
    return math.sqrt(total / pop.n)
