import math

import numpy as np
import pytest
from scipy import stats

from tpmdp.allocator import Allocation, ThresholdInstance, allocate
from tpmdp.config import ExperimentConfig
from tpmdp.simulation import (
    Group,
    MechanismRun,
    Population,
    baseline_randomized_response,
    baseline_sample,
    count_output,
    cross_validated_rmse,
    draw_active_set,
    evaluate_rmse,
    functional_linreg,
    generate_population,
    least_squares,
    linreg_statistics,
    party_sigma_gamma,
    randomized_response_probability,
    run_mechanism,
    sampling_probabilities,
    solve_functional,
)


def test_default_population():
    cfg = ExperimentConfig()
    pop = generate_population(cfg)
    assert pop.n == 1000
    assert np.count_nonzero(pop.groups == Group.CONSERVATIVE) == 540
    assert np.count_nonzero(pop.groups == Group.MODERATE) == 370
    cons = pop.epsilon[pop.groups == Group.CONSERVATIVE]
    assert cons.min() >= 0.01 and cons.max() <= 0.2
    assert np.all(pop.epsilon[pop.groups == Group.LIBERAL] == 1.0)
    assert np.all(pop.delta == 1e-4)
    assert abs(pop.bits.mean() - 0.15) < 0.05


def test_population_edge_cases():
    pop = generate_population(ExperimentConfig(f_C=1.0, f_M=0.0, n=200))
    assert pop.epsilon.min() >= 0.01 and pop.epsilon.max() <= 0.2
    assert generate_population(ExperimentConfig(rho=0.0, n=50)).bits.sum() == 0


def test_population_is_seeded():
    a = generate_population(ExperimentConfig(n=100, seed=4))
    b = generate_population(ExperimentConfig(n=100, seed=4))
    c = generate_population(ExperimentConfig(n=100, seed=5))
    np.testing.assert_array_equal(a.epsilon, b.epsilon)
    assert not np.array_equal(a.epsilon, c.epsilon)


def test_active_set_specs():
    assert draw_active_set(5, "all", 0).all()
    assert draw_active_set(50, "random:7", 0).sum() == 7
    np.testing.assert_array_equal(draw_active_set(4, [1, 3], 0), [True, False, True, False])
    for seed in range(20):
        assert draw_active_set(3, "random", seed).any()


def test_zero_allocation_releases_truth():
    inst = ThresholdInstance([1.0, 2.0], 1)
    run = run_mechanism(np.array([7.0]), inst, Allocation.from_variances([0, 0]), seed=1)
    assert run.released_output[0] == 7.0
    assert evaluate_rmse([run]) == 0.0


def test_receivers_get_output_others_bottom():
    inst = ThresholdInstance([1.0, 2.0, 3.0], 1, active=[1])
    run = run_mechanism(np.array([1.0]), inst, allocate(inst), seed=2)
    assert run.output_for(0) is None
    assert run.output_for(1) is not None


def test_noise_law():
    inst = ThresholdInstance([3, 2, 1, 1], 2)
    alloc = allocate(inst)
    errs = np.array([run_mechanism(np.zeros(1), inst, alloc, seed=(9, r)).error[0] for r in range(4000)])
    # Chi-square band for the sample variance at 99.9%.
    lo, hi = stats.chi2.ppf([0.0005, 0.9995], df=errs.size - 1) / (errs.size - 1)
    assert lo <= errs.var(ddof=1) / alloc.total <= hi
    assert stats.kstest(errs / math.sqrt(alloc.total), "norm").pvalue > 1e-3


def test_run_is_deterministic():
    inst = ThresholdInstance([3, 2, 1, 1], 2)
    alloc = allocate(inst)
    a = run_mechanism(np.ones(3), inst, alloc, seed=(1, 2))
    b = run_mechanism(np.ones(3), inst, alloc, seed=(1, 2))
    np.testing.assert_array_equal(a.noise_draws, b.noise_draws)


def test_functional_regression_recovers_weights():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, (20_000, 3))
    w = np.array([0.3, -0.2, 0.4])
    y = x @ w + 0.01 * rng.standard_normal(x.shape[0])
    np.testing.assert_allclose(solve_functional(linreg_statistics(x, y), 3, 0.0), least_squares(x, y), rtol=1e-10)
    assert np.sqrt(np.mean((least_squares(x, y) - w) ** 2)) < 1e-2
    noisy = functional_linreg(x, y, sigma=1.0, seed=3)
    assert np.sqrt(np.mean((noisy - w) ** 2)) < 5e-2


def test_statistics_are_additive():
    rng = np.random.default_rng(1)
    x, y = rng.uniform(-1, 1, (10, 2)), rng.uniform(-1, 1, 10)
    np.testing.assert_allclose(linreg_statistics(x, y), linreg_statistics(x[:4], y[:4]) + linreg_statistics(x[4:], y[4:]))


def test_sampling_probabilities():
    eps = np.array([0.5, 0.5, 0.5])
    np.testing.assert_array_equal(sampling_probabilities(eps, 0.5), 1.0)
    assert sampling_probabilities(np.array([1e-9]), 0.5)[0] < 1e-8
    pop = generate_population(ExperimentConfig())
    probs = sampling_probabilities(pop.epsilon, pop.epsilon.mean())
    cons = probs[pop.groups == Group.CONSERVATIVE]
    assert np.all((cons > 0) & (cons <= 1))


def test_sample_baseline_is_centralised_gaussian_when_homogeneous():
    pop = Population(np.zeros(400, np.int8), np.full(400, 0.5), np.full(400, 1e-5), bits=np.ones(400, np.int64))
    est = np.array([baseline_sample(pop, (0, r))[0] for r in range(3000)])
    sigma = party_sigma_gamma(pop)[0]
    assert abs(est.mean() - 400) < 4 * sigma / math.sqrt(est.size)
    assert est.std() == pytest.approx(sigma, rel=0.06)


def test_randomized_response():
    assert randomized_response_probability(math.log(3)) == pytest.approx(0.75)
    pop = Population(np.zeros(500, np.int8), np.full(500, 1.0), np.full(500, 1e-5),
                     bits=(np.arange(500) % 3 == 0).astype(np.int64))
    truth = float(pop.bits.sum())
    est = np.array([baseline_randomized_response(pop, (1, r)) for r in range(2000)])
    assert abs(est.mean() - truth) < 4 * est.std() / math.sqrt(est.size)
    huge = Population(np.zeros(10, np.int8), np.full(10, 50.0), np.full(10, 1e-5), bits=np.ones(10, np.int64))
    assert baseline_randomized_response(huge, 0) == pytest.approx(10.0)


def test_rmse_helpers():
    assert evaluate_rmse([3.0], truth=0.0) == 3.0
    assert evaluate_rmse([np.array([1.0]), np.array([-1.0])], truth=np.array([0.0])) == 1.0
    with pytest.raises(ValueError):
        evaluate_rmse([])


def test_cross_validation_with_exact_fit():
    cfg = ExperimentConfig(query="linreg", n=2000, label_noise=0.0)
    pop = generate_population(cfg)
    rmse = cross_validated_rmse(pop, lambda train, k: least_squares(pop.features[train], pop.labels[train]),
                                5, np.random.default_rng(0))
    assert rmse < 1e-10
