"""Benchmark harness: run methods over simulated scenarios, score the
standardized SATT bias per replication, and aggregate a per-method
report (datasets solved, bias mean/SD, RMSE, mean time).

Method failures (infeasibility, non-convergence, over-budget runs) are
counted as unsolved datasets, never crashes. Balancing-only methods
receive an outcome-withheld dataset view; outcomes are consumed solely
at the estimation step, except for declared mixed methods.
"""

from __future__ import annotations

import io
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .data import Dataset, EstimandSpec, GroupPair, PreprocessSpec, build_groups, preprocess
from .estimation import aggregate_bias, score, weighted_diff_means
from .exceptions import BalanceKitError
from .methods import (FeatureSpec, arb_satt, cbps_exact, ebal, ipw_weights,
                      kom, sbw)
from .metrics import KernelSpec
from .simulate import ScenarioSpec, generate_scenario, stable_seed
from .solvers import SolverOptions, logistic_fit


@dataclass
class BenchMethod:
    """A benchmark entrant: computes a SATT estimate for one dataset.

    ``fn(dataset, truth)`` returns the point estimate. ``mixed`` methods
    get the full dataset; balancing methods get an outcome-withheld view
    plus a separate estimation-stage callback on the real outcomes.
    """

    name: str
    fn: Callable
    mixed: bool = False


def _satt_from_weights(dataset_full, w_control):
    trt = dataset_full.treated_indices()
    return weighted_diff_means(
        dataset_full, np.full(trt.size, 1.0 / trt.size), w_control
    ).point


def _design_and_pair(view):
    design = preprocess(view, PreprocessSpec(standardize=True))
    pair = build_groups(view, EstimandSpec("SATT"))[0]
    return design, pair


def method_naive(dataset, truth):
    view = dataset.design_view()
    pair = build_groups(view, EstimandSpec("SATT"))[0]
    w = np.full(pair.u_indices.size, 1.0 / pair.u_indices.size)
    return _satt_from_weights(dataset, w)


def method_oracle(dataset, truth):
    return truth.true_satt


def method_ebal(dataset, truth):
    view = dataset.design_view()
    design, pair = _design_and_pair(view)
    sol = ebal(design, pair)
    return _satt_from_weights(dataset, sol.weights)


def method_sbw(dataset, truth):
    view = dataset.design_view()
    design, pair = _design_and_pair(view)
    sol = sbw(design, pair, deltas=0.02)
    return _satt_from_weights(dataset, sol.weights)


def method_cbps_exact(dataset, truth):
    view = dataset.design_view()
    design, pair = _design_and_pair(view)
    sol = cbps_exact(design, view, pair)
    return _satt_from_weights(dataset, sol.weights)


def method_ipw_logit(dataset, truth):
    view = dataset.design_view()
    design = preprocess(view, PreprocessSpec(standardize=True, add_intercept=True))
    _, pihat = logistic_fit(design.matrix, view.treatment,
                            opts=SolverOptions(max_iters=200, grad_tol=1e-6))
    pair = build_groups(view, EstimandSpec("SATT"))[0]
    odds = pihat[pair.u_indices] / (1.0 - pihat[pair.u_indices])
    return _satt_from_weights(dataset, odds)


def method_kom(dataset, truth):
    view = dataset.design_view()
    design, pair = _design_and_pair(view)
    sol = kom(design, pair, KernelSpec())
    return _satt_from_weights(dataset, sol.weights)


def method_arb(dataset, truth):
    design = preprocess(dataset.design_view(), PreprocessSpec(standardize=True))
    estimate, _, _, _ = arb_satt(design, dataset)
    return estimate


BUILTIN_METHODS = {
    "naive": BenchMethod("naive", method_naive),
    "oracle": BenchMethod("oracle", method_oracle),
    "ebal": BenchMethod("ebal", method_ebal),
    "sbw": BenchMethod("sbw", method_sbw),
    "cbps_exact": BenchMethod("cbps_exact", method_cbps_exact),
    "ipw_logit": BenchMethod("ipw_logit", method_ipw_logit),
    "kom": BenchMethod("kom", method_kom),
    "arb": BenchMethod("arb", method_arb, mixed=True),
}


@dataclass
class BenchReport:
    rows: list  # dicts: method, datasets_solved, datasets_total, mean_bias, sd_bias, rmse, mean_time_seconds

    COLUMNS = ("method", "datasets_solved", "datasets_total",
               "mean_bias", "sd_bias", "rmse", "mean_time_seconds")

    def to_csv(self, include_time: bool = True) -> str:
        """CSV of the per-method rows.

        All columns except ``mean_time_seconds`` are deterministic for a
        fixed master seed; drop the wall-clock column (include_time=False)
        when byte-identical output across runs is required.
        """
        cols = [c for c in self.COLUMNS if include_time or c != "mean_time_seconds"]
        buf = io.StringIO()
        buf.write(",".join(cols) + "\n")
        for r in self.rows:
            buf.write(",".join(_fmt(r[c]) for c in cols) + "\n")
        return buf.getvalue()

    def to_text(self) -> str:
        headers = ("Method", "Number of datasets", "Bias Mean", "Bias SD",
                   "RMSE", "Time Mean (sec)")
        lines = []
        data = [[r["method"], f'{r["datasets_solved"]}/{r["datasets_total"]}',
                 _fmt(r["mean_bias"]), _fmt(r["sd_bias"]), _fmt(r["rmse"]),
                 _fmt(r["mean_time_seconds"])] for r in self.rows]
        widths = [max(len(h), *(len(d[i]) for d in data)) if data else len(h)
                  for i, h in enumerate(headers)]
        lines.append("  ".join(h.ljust(w) for h, w in zip(headers, widths)))
        for d in data:
            lines.append("  ".join(v.ljust(w) for v, w in zip(d, widths)))
        return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, float):
        return "nan" if not np.isfinite(v) else f"{v:.6f}"
    return str(v)


def _run_one(args):
    scenario_dict, rep, master_seed, method_names, budget_seconds = args
    spec = ScenarioSpec(**{**scenario_dict,
                           "seed": stable_seed(scenario_dict["name"], rep, master_seed)})
    dataset, po, truth = generate_scenario(spec)
    records = []
    for name in method_names:
        method = BUILTIN_METHODS[name] if isinstance(name, str) else name
        t0 = time.perf_counter()
        solved, estimate, bias, err = False, None, None, None
        try:
            estimate = float(method.fn(dataset, truth))
            elapsed = time.perf_counter() - t0
            if elapsed <= budget_seconds:
                solved = True
                bias, _ = score(estimate, truth, "SATT")
            else:
                err = f"over budget ({elapsed:.1f}s > {budget_seconds}s)"
        except Exception as exc:  # failures are tallied, not raised
            elapsed = time.perf_counter() - t0
            err = f"{type(exc).__name__}: {exc}"
        records.append({
            "scenario": spec.name, "rep": rep, "method": method.name,
            "solved": solved, "estimate": estimate,
            "true_satt": truth.true_satt, "outcome_sd": truth.outcome_sd,
            "bias": bias, "time": elapsed, "error": err,
        })
    return records


def run_benchmark(methods: Sequence, scenarios: Sequence[ScenarioSpec],
                  reps: int = 1, workers: int = 1, master_seed: int = 0,
                  budget_seconds: float = 60.0,
                  log_path: Optional[str] = None) -> BenchReport:
    """Run every method on reps independent realizations of each scenario.

    Per-run seeds are a stable hash of (scenario name, rep, master seed),
    so results are reproducible regardless of worker count or execution
    order. Per-run records go to a JSON-lines log when requested.
    """
    if reps < 1:
        raise BalanceKitError("reps must be >= 1")
    method_objs = [BUILTIN_METHODS[m] if isinstance(m, str) else m for m in methods]
    names = [m.name for m in method_objs]
    # ship custom callables by value; builtin ids by name for picklability
    payload_methods = [m.name if isinstance(m0, str) else m
                       for m0, m in zip(methods, method_objs)]
    jobs = [(sc.to_dict(), rep, master_seed, payload_methods, budget_seconds)
            for sc in scenarios for rep in range(reps)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_one, jobs))
    else:
        chunks = [_run_one(j) for j in jobs]
    records = [r for chunk in chunks for r in chunk]
    records.sort(key=lambda r: (r["scenario"], r["rep"], names.index(r["method"])))

    if log_path:
        with open(log_path, "w") as fh:
            for r in records:
                fh.write(json.dumps(r) + "\n")

    rows = []
    total = len(scenarios) * reps
    for name in names:
        mine = [r for r in records if r["method"] == name]
        solved = [r for r in mine if r["solved"]]
        agg = aggregate_bias([r["bias"] for r in solved])
        rows.append({
            "method": name,
            "datasets_solved": len(solved),
            "datasets_total": total,
            "mean_bias": agg["mean_bias"],
            "sd_bias": agg["sd_bias"],
            "rmse": agg["rmse"],
            "mean_time_seconds": float(np.mean([r["time"] for r in mine])) if mine else float("nan"),
        })
    return BenchReport(rows)
