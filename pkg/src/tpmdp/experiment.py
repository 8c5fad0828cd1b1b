"""Monte Carlo comparison of the threshold mechanism against the baselines."""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import allocator
from .config import MECHANISMS_COUNT, ExperimentConfig
from .simulation import (
    RUN_STREAM,
    Population,
    baseline_randomized_response,
    baseline_sample,
    centralized_release,
    count_output,
    cross_validated_rmse,
    draw_active_set,
    generate_population,
    input_perturbation_linreg,
    least_squares,
    linreg_noise_scale,
    linreg_statistics,
    party_sigma_gamma,
    query_sensitivity,
    rng_for,
    run_mechanism,
    sample_threshold,
    solve_functional,
)
from .calibration import sigma_gamma_array

SCHEMA_VERSION = 1
COLUMNS = (
    "schema_version",
    "query",
    "mechanism",
    "row_type",
    "repetition",
    "truth",
    "estimate",
    "squared_error",
    "rmse",
    "noise_variance",
)
# Extra stream id for cross-validation folds, outside the mechanism code range.
_FOLD_STREAM = 1000


@dataclass(frozen=True, eq=False)
class Setup:
    config: ExperimentConfig
    population: Population
    instance: allocator.ThresholdInstance
    allocations: dict[str, allocator.Allocation]
    min_variance: float


def prepare(config: ExperimentConfig) -> Setup:
    pop = generate_population(config)
    active = draw_active_set(pop.n, config.active, config.seed)
    inst = allocator.ThresholdInstance(party_sigma_gamma(pop), config.t_abs, active)
    allocs = {
        "G": allocator.allocate(inst),
        "TMDP": allocator.baseline_tmdp(inst),
        "non-thre": allocator.baseline_non_threshold(inst),
    }
    return Setup(config, pop, inst, allocs, allocator.baseline_min_centralized(inst))


def _fmt(x) -> str:
    if x is None:
        return ""
    return repr(float(x))


def _noise_variance(setup: Setup, mech: str) -> float | None:
    if mech in setup.allocations:
        return setup.allocations[mech].total
    if mech == "MIN":
        return setup.min_variance
    if mech == "non-pri":
        return 0.0
    if mech == "Sample":
        pop = setup.population
        s = float(sigma_gamma_array(sample_threshold(pop), float(pop.delta.min()), query_sensitivity(pop)))
        return s * s
    return None


def _count_run(setup: Setup, mech: str, rep: int) -> tuple[float, float]:
    cfg, pop = setup.config, setup.population
    key = (cfg.seed, RUN_STREAM, MECHANISMS_COUNT.index(mech), rep)
    truth = float(count_output(pop)[0])
    if mech in setup.allocations:
        run = run_mechanism(count_output(pop), setup.instance, setup.allocations[mech], key)
        est = float(run.released_output[0])
    elif mech == "MIN":
        est = float(centralized_release(count_output(pop), setup.min_variance, rng_for(*key))[0])
    elif mech == "Sample":
        est = float(baseline_sample(pop, key)[0])
    elif mech == "PLDP":
        est = baseline_randomized_response(pop, key)
    elif mech == "non-pri":
        est = truth
    else:
        raise ValueError(f"unknown mechanism {mech!r}")
    return truth, est


def _linreg_run(setup: Setup, mech: str, rep: int) -> float:
    cfg, pop = setup.config, setup.population
    d = pop.features.shape[1]
    code = MECHANISMS_COUNT.index(mech)
    scale = linreg_noise_scale(d)

    def fit(train: np.ndarray, fold: int) -> np.ndarray:
        key = (cfg.seed, RUN_STREAM, code, rep, fold)
        if mech == "non-pri":
            return least_squares(pop.features[train], pop.labels[train])
        if mech == "Sample":
            return baseline_sample(pop, key, keep_mask=train)
        if mech == "PLDP":
            return input_perturbation_linreg(pop, key, keep_mask=train)
        stats = linreg_statistics(pop.features[train], pop.labels[train])
        if mech == "MIN":
            released = centralized_release(stats, setup.min_variance, rng_for(*key), scale)
            return solve_functional(released, d, math.sqrt(setup.min_variance))
        alloc = setup.allocations[mech]
        run = run_mechanism(stats, setup.instance, alloc, key, coordinate_scale=scale)
        return solve_functional(run.released_output, d, math.sqrt(alloc.total))

    folds_rng = rng_for(cfg.seed, RUN_STREAM, _FOLD_STREAM, rep)
    try:
        return cross_validated_rmse(pop, fit, cfg.folds, folds_rng)
    except np.linalg.LinAlgError:
        return math.nan


def run_experiment(config: ExperimentConfig, threads: int = 1) -> list[dict[str, str]]:
    """All run rows, then one summary row per mechanism, as formatted strings.

    Row order depends only on the config, never on thread scheduling.
    """
    setup = prepare(config)
    mechs = config.mechanism_list
    tasks = [(m, r) for m in mechs for r in range(config.n_repetitions)]

    if config.query == "count":
        work = lambda task: _count_run(setup, *task)  # noqa: E731
    else:
        work = lambda task: _linreg_run(setup, *task)  # noqa: E731
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, tasks))
    else:
        results = [work(t) for t in tasks]

    rows = []
    per_mech: dict[str, list[float]] = {m: [] for m in mechs}
    for (mech, rep), res in zip(tasks, results):
        row = dict.fromkeys(COLUMNS, "")
        row.update(schema_version=str(SCHEMA_VERSION), query=config.query, mechanism=mech,
                   row_type="run", repetition=str(rep))
        if config.query == "count":
            truth, est = res
            sq = (est - truth) ** 2
            per_mech[mech].append(sq)
            row.update(truth=_fmt(truth), estimate=_fmt(est), squared_error=_fmt(sq), rmse=_fmt(math.sqrt(sq)))
        else:
            per_mech[mech].append(res)
            row.update(rmse=_fmt(res))
        rows.append(row)

    for mech in mechs:
        vals = np.asarray(per_mech[mech])
        if config.query == "count":
            rmse = math.sqrt(float(vals.mean()))
        else:
            rmse = float(np.nanmean(vals)) if np.isfinite(vals).any() else math.nan
        row = dict.fromkeys(COLUMNS, "")
        row.update(schema_version=str(SCHEMA_VERSION), query=config.query, mechanism=mech,
                   row_type="summary", rmse=_fmt(rmse), noise_variance=_fmt(_noise_variance(setup, mech)))
        rows.append(row)
    return rows


def rows_to_csv(rows: list[dict[str, str]]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def summary(rows: list[dict[str, str]]) -> dict[str, float]:
    return {r["mechanism"]: float(r["rmse"]) for r in rows if r["row_type"] == "summary"}
