"""Command-line front end: ``tpmdp {allocate,verify,bench,experiment,compose}``.

Exit codes: 0 success, 1 verification or feasibility failure, 2 bad input.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
import tracemalloc
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from . import allocator, lp_oracle
from .calibration import PrivacyBudget, sigma_gamma_array
from .composition import CompositionMode, CompositionRequest, compose
from .config import CONFIG_SCHEMA, ConfigError, ExperimentConfig, config_from_dict, load_config
from .experiment import rows_to_csv, run_experiment
from .simulation import draw_active_set, rng_for

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2
GAP_TOL = 1e-6  # verify: allowed relative gap between allocator and exact LP
BENCH_COLUMNS = ("schema_version", "n", "t", "active", "alloc_ns", "census", "census_log10", "peak_bytes")
# math.comb at n = 10^5, t = n/2 already takes a few seconds; past this only the log is printed.
EXACT_CENSUS_MAX_N = 20_000

INSTANCE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "sigma_gamma": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 2},
        "epsilon": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 2},
        "delta": {
            "oneOf": [
                {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0, "maximum": 1}},
            ]
        },
        "sensitivity": {"type": "number", "exclusiveMinimum": 0},
        "t": {"type": "number", "minimum": 0},
        "active": {
            "oneOf": [
                {"const": "all"},
                {"type": "array", "items": {"type": "integer", "minimum": 1}},
            ]
        },
    },
    "required": ["t"],
    "oneOf": [{"required": ["sigma_gamma"]}, {"required": ["epsilon", "delta"]}],
}


class InputError(ValueError):
    pass


# --- helpers ---------------------------------------------------------------------------------

def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _resolve_t(t: float, n: int) -> int:
    """Integers are absolute; a value in (0, 1) is a fraction of n, floored."""
    if t != int(t):
        if not 0 < t < 1:
            raise InputError(f"fractional t must lie in (0, 1), got {t}")
        return math.floor(t * n)
    return int(t)


def _parse_active(spec, n: int) -> np.ndarray:
    if spec is None or spec == "all":
        return np.ones(n, dtype=bool)
    if isinstance(spec, str):
        try:
            spec = [int(x) for x in spec.split(",") if x.strip()]
        except ValueError:
            raise InputError(f"--active takes 'all' or 1-based party numbers, got {spec!r}") from None
    if any(not 1 <= k <= n for k in spec):
        raise InputError(f"active party numbers must lie in 1..{n}")
    mask = np.zeros(n, dtype=bool)
    mask[np.asarray(spec, dtype=np.int64) - 1] = True
    return mask


def _instance_from_mapping(doc: dict) -> allocator.ThresholdInstance:
    try:
        jsonschema.validate(doc, INSTANCE_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise InputError(f"instance error at {where}: {exc.message}") from None
    if "sigma_gamma" in doc:
        sg = np.asarray(doc["sigma_gamma"], dtype=float)
    else:
        eps = np.asarray(doc["epsilon"], dtype=float)
        delta = np.broadcast_to(np.asarray(doc["delta"], dtype=float), eps.shape)
        sg = sigma_gamma_array(eps, delta, float(doc.get("sensitivity", 1.0)))
    n = sg.size
    t = _resolve_t(float(doc["t"]), n)
    if t >= n:
        raise InputError(f"need t < n, got t={t}, n={n}")
    return allocator.ThresholdInstance(sg, t, _parse_active(doc.get("active"), n))


def _load_instance(args) -> allocator.ThresholdInstance:
    if args.instance:
        try:
            doc = yaml.safe_load(Path(args.instance).read_text())
        except (OSError, yaml.YAMLError) as exc:
            raise InputError(f"cannot read instance {args.instance}: {exc}") from None
        if not isinstance(doc, dict):
            raise InputError("instance file must hold a mapping")
        return _instance_from_mapping(doc)
    doc: dict = {}
    if args.sigma_gamma is not None:
        doc["sigma_gamma"] = args.sigma_gamma
    if args.epsilon is not None:
        doc["epsilon"] = args.epsilon
        doc["delta"] = args.delta[0] if args.delta and len(args.delta) == 1 else args.delta
        if args.sensitivity is not None:
            doc["sensitivity"] = args.sensitivity
    if args.t is None:
        raise InputError("--t is required without --instance")
    doc["t"] = args.t
    if args.active is not None:
        doc["active"] = args.active if args.active == "all" else [int(x) for x in args.active.split(",") if x]
    return _instance_from_mapping(doc)


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _report(inst, alloc, check) -> dict:
    sub = allocator.subcase_of(inst)
    return {
        "n": inst.n,
        "t": inst.t,
        "active": [int(i) + 1 for i in inst.active_indices],
        "subcase": sub.tag.value,
        "variances": [float(v) for v in alloc.variances],
        "total": alloc.total,
        "feasible": check.feasible,
        "worst_party": None if check.worst_party is None else int(check.worst_party) + 1,
        "worst_slack": check.worst_slack if math.isfinite(check.worst_slack) else None,
    }


# --- subcommands -------------------------------------------------------------------------------

def cmd_allocate(args) -> int:
    inst = _load_instance(args)
    alloc = allocator.allocate(inst)
    check = allocator.feasibility_check(inst, alloc)
    report = _report(inst, alloc, check)
    closed = allocator.optimal_value(inst)
    report["optimal_value"] = closed
    optimal = math.isclose(alloc.total, closed, rel_tol=1e-9, abs_tol=1e-12)
    _emit(json.dumps(report, indent=2) + "\n", args.out)
    return EXIT_OK if check.feasible and optimal else EXIT_FAIL


def _corrupt(alloc) -> allocator.Allocation:
    """Shrink the largest variance to half; used to exercise the failure path."""
    v = alloc.variances.copy()
    if v.size and v.max() > 0:
        v[np.argmax(v)] *= 0.5
    return allocator.Allocation.from_variances(v)


def _verify_one(inst, inject: bool) -> dict:
    alloc = allocator.allocate(inst)
    if inject:
        alloc = _corrupt(alloc)
    exact = lp_oracle.oracle_optimum(inst)
    check = allocator.feasibility_check(inst, alloc)
    gap = abs(alloc.total - exact.total) / exact.total if exact.total > 0 else abs(alloc.total)
    return {
        "n": inst.n,
        "t": inst.t,
        "active": [int(i) + 1 for i in inst.active_indices],
        "total": alloc.total,
        "oracle_total": exact.total,
        "relative_gap": gap,
        "feasible": check.feasible,
        "ok": bool(check.feasible and gap <= GAP_TOL),
    }


def _random_instances(max_n: int, per_cell: int, seed: int):
    rng = rng_for(seed, 7)
    for n in range(2, max_n + 1):
        for t in range(1, n):
            for _ in range(per_cell):
                sg = np.exp(rng.uniform(-2.0, 2.0, size=n))
                active = rng.random(n) < 0.5
                if not active.any():
                    active[rng.integers(n)] = True
                yield allocator.ThresholdInstance(sg, t, active)


def cmd_verify(args) -> int:
    if args.instance or args.sigma_gamma is not None or args.epsilon is not None:
        inst = _load_instance(args)
        if inst.n > args.max_n:
            raise InputError(f"instance has n={inst.n} > --max-n {args.max_n}")
        results = [_verify_one(inst, args.inject_infeasible)]
    else:
        results = [_verify_one(i, args.inject_infeasible) for i in _random_instances(args.max_n, args.random, args.seed)]
    failures = [r for r in results if not r["ok"]]
    summary = {
        "instances": len(results),
        "failures": len(failures),
        "max_relative_gap": max(r["relative_gap"] for r in results),
        "all_feasible": all(r["feasible"] for r in results),
        "first_failure": failures[0] if failures else None,
    }
    if len(results) == 1:
        summary["result"] = results[0]
    _emit(json.dumps(summary, indent=2) + "\n", args.out)
    return EXIT_FAIL if failures else EXIT_OK


def _bench_instance(n: int, t_rule: float, active: str, seed: int) -> allocator.ThresholdInstance:
    rng = rng_for(seed, 11, n)
    eps = rng.uniform(0.01, 1.0, size=n)
    sg = sigma_gamma_array(eps, 1.0 / (10 * n))
    t = _resolve_t(t_rule, n)
    return allocator.ThresholdInstance(sg, min(t, n - 1), draw_active_set(n, active, seed))


def bench_rows(sizes, t_rule: float, active: str, repeats: int, seed: int, memory: bool) -> list[dict]:
    rows = []
    for n in sizes:
        inst = _bench_instance(n, t_rule, active, seed)
        allocator.allocate(inst)  # warm-up
        times = []
        for _ in range(repeats):
            start = time.perf_counter_ns()
            allocator.allocate(inst)
            times.append(time.perf_counter_ns() - start)
        peak = ""
        if memory:
            tracemalloc.start()
            allocator.allocate(inst)
            peak = str(tracemalloc.get_traced_memory()[1])
            tracemalloc.stop()
        k = inst.n_active
        census = str(lp_oracle.constraint_census(n, inst.t, k)) if n <= EXACT_CENSUS_MAX_N else ""
        rows.append({
            "schema_version": "1",
            "n": str(n),
            "t": str(inst.t),
            "active": str(k),
            "alloc_ns": str(int(np.median(times))),
            "census": census,
            "census_log10": repr(lp_oracle.constraint_census_log10(n, inst.t, k)),
            "peak_bytes": peak,
        })
    return rows


def cmd_bench(args) -> int:
    rows = bench_rows(args.sizes, args.t_rule, args.active, args.repeats, args.seed, args.memory)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=BENCH_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    _emit(buf.getvalue(), args.out)
    return EXIT_OK


def cmd_experiment(args) -> int:
    if args.print_schema:
        _emit(json.dumps(CONFIG_SCHEMA, indent=2) + "\n", args.out)
        return EXIT_OK
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if args.seed_given:
        overrides["seed"] = args.seed
    if overrides:
        cfg = config_from_dict({**cfg.to_dict(), **overrides})
    rows = run_experiment(cfg, threads=args.threads)
    _emit(rows_to_csv(rows), args.out or cfg.out)
    return EXIT_OK


def _read_budget_table(path: str) -> tuple[list[list[PrivacyBudget]], list[int] | None, list[int]]:
    """CSV with columns mechanism, party, epsilon, delta and optionally t."""
    try:
        with open(path, newline="") as fh:
            records = list(csv.DictReader(fh))
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from None
    need = {"mechanism", "party", "epsilon", "delta"}
    if not records or not need <= set(records[0]):
        raise InputError(f"budget table needs columns {sorted(need)}")
    table: dict[str, dict[int, PrivacyBudget]] = {}
    thresholds: dict[str, int] = {}
    try:
        for rec in records:
            mech, party = rec["mechanism"], int(rec["party"])
            table.setdefault(mech, {})[party] = PrivacyBudget(float(rec["epsilon"]), float(rec["delta"]))
            if rec.get("t"):
                thresholds[mech] = int(rec["t"])
    except ValueError as exc:
        raise InputError(f"bad budget table row: {exc}") from None
    parties = sorted(next(iter(table.values())))
    budgets = []
    for mech, row in table.items():
        if sorted(row) != parties:
            raise InputError(f"mechanism {mech!r} does not list the same parties as the others")
        budgets.append([row[p] for p in parties])
    return budgets, (list(thresholds.values()) or None), parties


def cmd_compose(args) -> int:
    budgets, thresholds, parties = _read_budget_table(args.table)
    mode = CompositionMode(args.mode)
    delta_prime = None
    if mode is CompositionMode.ADVANCED:
        if args.delta_prime is None:
            raise InputError("--delta-prime is required in advanced mode")
        delta_prime = tuple([args.delta_prime] * len(parties))
    try:
        req = CompositionRequest(tuple(map(tuple, budgets)), mode, delta_prime, tuple(thresholds) if thresholds else None)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    composed = compose(req)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["schema_version", "party", "epsilon", "delta"])
    for p, b in zip(parties, composed):
        writer.writerow(["1", p, repr(b.epsilon), repr(b.delta)])
    _emit(buf.getvalue(), args.out)
    return EXIT_OK


# --- parser ----------------------------------------------------------------------------------

class _SeedAction(argparse.Action):
    def __call__(self, parser, namespace, values, option_string=None):
        setattr(namespace, self.dest, values)
        namespace.seed_given = True


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, action=_SeedAction, help="master seed (default 0)")
    common.add_argument("--out", help="write output here instead of stdout")
    common.add_argument("--config", help="experiment config (YAML or JSON)")
    common.add_argument("--threads", type=int, default=1, help="worker threads for experiments")

    instance = argparse.ArgumentParser(add_help=False)
    instance.add_argument("--instance", help="YAML/JSON instance: sigma_gamma or epsilon+delta, t, active")
    instance.add_argument("--sigma-gamma", type=_float_list, help="comma-separated per-party noise levels")
    instance.add_argument("--epsilon", type=_float_list, help="comma-separated per-party epsilons")
    instance.add_argument("--delta", type=_float_list, help="one delta, or one per party")
    instance.add_argument("--sensitivity", type=float)
    instance.add_argument("--t", type=float, help="threshold; a value in (0, 1) is a fraction of n")
    instance.add_argument("--active", help="'all' (default) or comma-separated 1-based party numbers")

    parser = argparse.ArgumentParser(prog="tpmdp", description=__doc__.splitlines()[0])
    parser.set_defaults(seed_given=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("allocate", parents=[common, instance], help="optimal noise allocation for one instance")
    p.set_defaults(func=cmd_allocate)

    p = sub.add_parser("verify", parents=[common, instance], help="compare the allocator with the exact LP")
    p.add_argument("--max-n", type=int, default=8)
    p.add_argument("--random", type=int, default=5, help="random instances per (n, t) when no instance is given")
    p.add_argument("--inject-infeasible", action="store_true", help="halve the largest variance before checking")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", parents=[common], help="allocation time and constraint counts versus n")
    p.add_argument("--sizes", type=lambda s: [int(float(x)) for x in s.split(",")], default=[10_000, 100_000, 1_000_000])
    p.add_argument("--t-rule", type=float, default=0.5, help="fraction of n (default 0.5) or absolute t")
    p.add_argument("--active", default="all", help="'all', 'random' or 'random:K'")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--memory", action="store_true", help="also record the tracemalloc peak")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("experiment", parents=[common], help="Monte Carlo RMSE comparison, CSV out")
    p.add_argument("--print-schema", action="store_true", help="print the config JSON schema and exit")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("compose", parents=[common], help="compose per-party budgets across mechanisms")
    p.add_argument("table", help="CSV with columns mechanism,party,epsilon,delta[,t]")
    p.add_argument("--mode", choices=[m.value for m in CompositionMode], default="basic")
    p.add_argument("--delta-prime", type=float)
    p.set_defaults(func=cmd_compose)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InputError, ConfigError) as exc:
        print(f"tpmdp {args.command}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"tpmdp {args.command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
