"""Command-line front end: simulate, balance, estimate, bench, diagnose.

Exit codes: 0 success / convergence, 1 usage error, 2 reported
infeasibility (a scientific outcome, distinct from user error).
Balancing commands operate on an outcome-withheld dataset view; outcomes
are only read by the estimate/bench stages.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import __version__
from .data import (Dataset, EstimandSpec, PreprocessSpec, build_groups,
                   load_csv, preprocess, save_csv, schema_of)
from .bench import BUILTIN_METHODS, run_benchmark
from .estimation import ipw_satt_estimate, weighted_diff_means
from .exceptions import BalanceKitError, InfeasibleProblemError, SchemaError
from .methods import (FeatureSpec, METHOD_IDS, cbps_exact, ebal, ipw_weights,
                      kom, sbw)
from .metrics import KernelSpec, mean_imbalance
from .simulate import ScenarioSpec, generate_scenario, illustrative_example
from .solvers import SolverOptions, logistic_fit

BALANCE_METHODS = ("ebal", "sbw", "kom", "cbps_exact", "ipw")


def _parser():
    p = argparse.ArgumentParser(prog="balancekit",
                                description="Optimization-based covariate balancing")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a synthetic dataset CSV")
    sim.add_argument("--out", required=True)
    sim.add_argument("--schema-out", default=None)
    sim.add_argument("--n", type=int, default=1000)
    sim.add_argument("--p", type=int, default=10)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--illustrative", action="store_true",
                     help="use the two-point social-support example")
    sim.add_argument("--scenario-json", default=None,
                     help="JSON file with ScenarioSpec fields (overrides --n/--p)")

    bal = sub.add_parser("balance", help="compute balancing weights")
    bal.add_argument("--input", required=True)
    bal.add_argument("--schema", required=True)
    bal.add_argument("--method", required=True)
    bal.add_argument("--estimand", default="SATT", choices=["SATT", "SATE"])
    bal.add_argument("--features", default="raw")
    bal.add_argument("--delta", type=float, default=0.02)
    bal.add_argument("--sigma", default="median-heuristic")
    bal.add_argument("--seed", type=int, default=0)
    bal.add_argument("--out", default=None, help="weight-solution JSON path")

    est = sub.add_parser("estimate", help="estimate an effect from weights")
    est.add_argument("--input", required=True)
    est.add_argument("--schema", required=True)
    est.add_argument("--weights", required=True, help="balance output JSON")
    est.add_argument("--estimand", default="SATT", choices=["SATT", "SATE"])

    ben = sub.add_parser("bench", help="run the benchmark harness")
    ben.add_argument("--config", required=True, help="JSON scenario/method config")
    ben.add_argument("--out", required=True, help="report CSV path")
    ben.add_argument("--log", default=None, help="per-run JSON-lines log path")
    ben.add_argument("--seed", type=int, default=0)
    ben.add_argument("--workers", type=int, default=1)
    ben.add_argument("--budget-seconds", type=float, default=60.0)

    diag = sub.add_parser("diagnose", help="report covariate balance of a dataset")
    diag.add_argument("--input", required=True)
    diag.add_argument("--schema", required=True)
    return p


def cmd_simulate(args):
    if args.illustrative:
        dataset, _, _ = illustrative_example(args.n, seed=args.seed)
    else:
        fields = {"n": args.n, "p": args.p, "seed": args.seed}
        if args.scenario_json:
            with open(args.scenario_json) as fh:
                fields = {**json.load(fh), "seed": args.seed}
        dataset, _, truth = generate_scenario(ScenarioSpec(**fields))
        print(f"true SATT {truth.true_satt:.6f}, true SATE {truth.true_sate:.6f}")
    save_csv(dataset, args.out)
    if args.schema_out:
        with open(args.schema_out, "w") as fh:
            json.dump(schema_of(dataset), fh, indent=2)
    print(f"wrote {dataset.n} rows to {args.out}")
    return 0


def _load(args):
    with open(args.schema) as fh:
        schema = json.load(fh)
    return load_csv(args.input, schema)


def cmd_balance(args):
    if args.method not in BALANCE_METHODS:
        print(f"unknown method {args.method!r}; valid: {', '.join(BALANCE_METHODS)}",
              file=sys.stderr)
        return 1
    dataset = _load(args)
    view = dataset.design_view()
    design = preprocess(view, PreprocessSpec(standardize=True))
    pairs = build_groups(view, EstimandSpec(args.estimand))
    opts = SolverOptions(seed=args.seed)
    features = FeatureSpec(args.features)
    solutions = []
    for pair in pairs:
        if args.method == "ebal":
            sol = ebal(design, pair, features, opts=opts)
        elif args.method == "sbw":
            sol = sbw(design, pair, features, deltas=args.delta, opts=opts)
        elif args.method == "kom":
            bw = args.sigma if args.sigma == "median-heuristic" else float(args.sigma)
            sol = kom(design, pair, KernelSpec(bandwidth=bw), opts=opts)
        elif args.method == "cbps_exact":
            sol = cbps_exact(design, view, pair, opts=opts)
        else:  # ipw
            withcept = preprocess(view, PreprocessSpec(standardize=True, add_intercept=True))
            _, pihat = logistic_fit(withcept.matrix, view.treatment,
                                    opts=SolverOptions(max_iters=200, grad_tol=1e-6))
            w_all = ipw_weights(view, EstimandSpec(args.estimand), pihat)
            from .methods import WeightSolution
            from .solvers import SolveDiagnostics
            w_u = np.abs(w_all[pair.u_indices])
            sol = WeightSolution(w_u, "ipw",
                                 SolveDiagnostics(0.0, 0.0, 1, True, 0.0),
                                 mean_imbalance(design, pair, w_u))
        solutions.append((pair, sol))

    before_after = []
    for pair, sol in solutions:
        uniform = np.full(pair.u_indices.size, 1.0 / pair.u_indices.size)
        before = mean_imbalance(design, pair, uniform)
        after = mean_imbalance(design, pair, sol.weights)
        before_after.append((pair.role, before, after))

    print("column,side,imbalance_before,imbalance_after")
    for role, before, after in before_after:
        for name, b, a in zip(design.names, before, after):
            print(f"{name},{role},{b:.6g},{a:.6g}")
    if args.out:
        payload = [json.loads(sol.to_json(ids=[dataset.ids[i] for i in pair.u_indices]))
                   for pair, sol in solutions]
        with open(args.out, "w") as fh:
            json.dump(payload, fh, indent=2)
    return 0


def cmd_estimate(args):
    dataset = _load(args)
    with open(args.weights) as fh:
        payload = json.load(fh)
    id_to_row = {i: k for k, i in enumerate(dataset.ids)}
    if args.estimand == "SATT":
        wmap = payload[0]["weights"]
        ctrl = dataset.control_indices()
        w_control = np.array([wmap[dataset.ids[i]] for i in ctrl])
        trt = dataset.treated_indices()
        res = weighted_diff_means(dataset, np.full(trt.size, 1.0 / trt.size), w_control,
                                  method=payload[0]["method"])
    else:
        by_role = {}
        trt = set(dataset.treated_indices().tolist())
        for entry in payload:
            rows = [id_to_row[i] for i in entry["weights"]]
            role = "treated-side" if set(rows) <= trt else "control-side"
            by_role[role] = np.array(list(entry["weights"].values()))
        res = weighted_diff_means(dataset, by_role["treated-side"],
                                  by_role["control-side"],
                                  method=payload[0]["method"])
    print(res.to_json())
    return 0


def cmd_bench(args):
    with open(args.config) as fh:
        config = json.load(fh)
    scenarios = [ScenarioSpec(**s) for s in config["scenarios"]]
    methods = config["methods"]
    bad = [m for m in methods if m not in BUILTIN_METHODS]
    if bad:
        print(f"unknown bench method(s) {bad}; valid: {sorted(BUILTIN_METHODS)}",
              file=sys.stderr)
        return 1
    report = run_benchmark(methods, scenarios, reps=config.get("reps", 1),
                           workers=args.workers, master_seed=args.seed,
                           budget_seconds=args.budget_seconds,
                           log_path=args.log)
    with open(args.out, "w", newline="") as fh:
        fh.write(report.to_csv())
    print(report.to_text(), end="")
    return 0


def cmd_diagnose(args):
    dataset = _load(args)
    view = dataset.design_view()
    design = preprocess(view, PreprocessSpec(standardize=True))
    pair = build_groups(view, EstimandSpec("SATT"))[0]
    uniform = np.full(pair.u_indices.size, 1.0 / pair.u_indices.size)
    imb = mean_imbalance(design, pair, uniform)
    print("column,unweighted_imbalance")
    for name, v in zip(design.names, imb):
        print(f"{name},{v:.6g}")
    if design.dropped:
        print(f"# dropped collinear/degenerate columns: {design.dropped}", file=sys.stderr)
    return 0


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    handler = {
        "simulate": cmd_simulate,
        "balance": cmd_balance,
        "estimate": cmd_estimate,
        "bench": cmd_bench,
        "diagnose": cmd_diagnose,
    }[args.command]
    try:
        return handler(args)
    except InfeasibleProblemError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 2
    except (SchemaError, BalanceKitError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
