import csv
import io

import pytest

from tpmdp.config import ExperimentConfig
from tpmdp.experiment import COLUMNS, rows_to_csv, run_experiment, summary


def _small(**kw):
    base = dict(n=300, repetitions=20, seed=1)
    base.update(kw)
    return ExperimentConfig(**base)


def test_csv_shape_and_header():
    cfg = _small(repetitions=3)
    text = rows_to_csv(run_experiment(cfg))
    rows = list(csv.DictReader(io.StringIO(text)))
    assert tuple(rows[0].keys()) == COLUMNS
    runs = [r for r in rows if r["row_type"] == "run"]
    assert len(runs) == 3 * len(cfg.mechanism_list)
    assert {r["mechanism"] for r in rows if r["row_type"] == "summary"} == set(cfg.mechanism_list)


def test_floats_round_trip():
    rows = run_experiment(_small(repetitions=2, mechanisms=["G"]))
    for r in rows:
        if r["estimate"]:
            assert repr(float(r["estimate"])) == r["estimate"]


def test_threads_do_not_change_output():
    cfg = _small(repetitions=5)
    assert rows_to_csv(run_experiment(cfg, threads=1)) == rows_to_csv(run_experiment(cfg, threads=3))


def test_zero_noise_control():
    assert summary(run_experiment(_small(mechanisms=["non-pri"])))["non-pri"] == 0.0


def test_variance_ordering_in_summary():
    rows = run_experiment(_small(mechanisms=["G", "TMDP", "non-thre", "MIN"], repetitions=2))
    var = {r["mechanism"]: float(r["noise_variance"]) for r in rows if r["row_type"] == "summary"}
    assert var["MIN"] <= var["G"] <= var["TMDP"] <= var["non-thre"]


def test_g_beats_non_threshold_on_default_count():
    s = summary(run_experiment(ExperimentConfig(repetitions=60, mechanisms=["G", "non-thre"])))
    assert s["G"] <= s["non-thre"]


def test_g_flat_in_density():
    # The noise does not depend on the data, so RMSE(G) barely moves with rho.
    vals = [summary(run_experiment(_small(rho=rho, repetitions=200, mechanisms=["G"])))["G"] for rho in (0.05, 0.5)]
    assert vals[0] == pytest.approx(vals[1], rel=0.2)


def test_linreg_runs():
    cfg = ExperimentConfig(query="linreg", n=3000, repetitions=2, mechanisms=["G", "non-pri", "PLDP"])
    s = summary(run_experiment(cfg))
    assert s["non-pri"] < 0.1
    assert s["non-pri"] <= s["G"]
