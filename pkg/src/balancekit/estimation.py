"""Turning weights into effect estimates and scoring them against truth."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import Dataset, EstimandSpec
from .exceptions import BalanceKitError


@dataclass
class EstimateResult:
    estimand: str
    point: float
    method: str
    n_used: int
    weights_summary: dict

    def __post_init__(self):
        if not np.isfinite(self.point):
            raise BalanceKitError("estimate must be finite")
        if self.n_used < 2:
            raise BalanceKitError("need at least two subjects")

    def to_json(self) -> str:
        return json.dumps({
            "estimand": self.estimand, "point": self.point,
            "method": self.method, "n_used": self.n_used,
            "weights_summary": self.weights_summary,
        })


@dataclass(frozen=True)
class TruthRecord:
    true_sate: float
    true_satt: float
    outcome_sd: float

    def __post_init__(self):
        if self.outcome_sd <= 0:
            raise BalanceKitError("outcome_sd must be positive")


def _summary(w):
    w = np.asarray(w, dtype=float)
    return {"min": float(w.min()), "max": float(w.max()), "sum": float(w.sum())}


def weighted_diff_means(dataset: Dataset, w_treated, w_control,
                        method: str = "weighted") -> EstimateResult:
    """Hajek weighted difference in means between the two arms."""
    if not dataset.has_outcome:
        raise BalanceKitError("outcomes required for estimation")
    y = dataset.outcome
    trt, ctrl = dataset.treated_indices(), dataset.control_indices()
    w_treated = np.asarray(w_treated, dtype=float)
    w_control = np.asarray(w_control, dtype=float)
    st, sc = w_treated.sum(), w_control.sum()
    if st <= 0 or sc <= 0:
        raise BalanceKitError("each group's weight sum must be positive")
    point = float((w_treated @ y[trt]) / st - (w_control @ y[ctrl]) / sc)
    return EstimateResult("diff-means", point, method, dataset.n,
                          {"treated": _summary(w_treated), "control": _summary(w_control)})


def ipw_sate_estimate(dataset: Dataset, w, hajek: bool = False) -> EstimateResult:
    """SATE from signed inverse-propensity weights.

    The plain form averages w_i Y_i over the whole sample; the Hajek
    variant normalizes each arm by its weight sum and is labeled
    distinctly in the output.
    """
    if not dataset.has_outcome:
        raise BalanceKitError("outcomes required for estimation")
    y = dataset.outcome
    w = np.asarray(w, dtype=float)
    z = dataset.treatment
    if hajek:
        wt = np.where(z == 1, w, 0.0)
        wc = np.where(z == 0, -w, 0.0)  # control weights are negative as printed
        point = float((wt @ y) / wt.sum() - (wc @ y) / wc.sum())
        label = "ipw-hajek"
    else:
        point = float((w @ y) / dataset.n)
        label = "ipw"
    return EstimateResult("SATE", point, label, dataset.n, {"all": _summary(w)})


def ipw_satt_estimate(dataset: Dataset, w, hajek: bool = True) -> EstimateResult:
    """SATT from odds weights: treated mean minus odds-weighted control mean."""
    if not dataset.has_outcome:
        raise BalanceKitError("outcomes required for estimation")
    y = dataset.outcome
    z = dataset.treatment
    w = np.asarray(w, dtype=float)
    trt, ctrl = dataset.treated_indices(), dataset.control_indices()
    odds = -w[ctrl]
    if hajek:
        point = float(y[trt].mean() - (odds @ y[ctrl]) / odds.sum())
        label = "ipw-satt-hajek"
    else:
        point = float(y[trt].mean() - (odds @ y[ctrl]) / trt.size)
        label = "ipw-satt"
    return EstimateResult("SATT", point, label, dataset.n, {"all": _summary(w)})


def true_estimands(y0, y1, z) -> TruthRecord:
    """Exact sample truths from both potential outcomes (simulation only)."""
    y0 = np.asarray(y0, dtype=float)
    y1 = np.asarray(y1, dtype=float)
    z = np.asarray(z, dtype=int)
    delta = y1 - y0
    observed = np.where(z == 1, y1, y0)
    sd = float(observed.std(ddof=1))
    return TruthRecord(
        true_sate=float(delta.mean()),
        true_satt=float(delta[z == 1].mean()),
        outcome_sd=sd if sd > 0 else 1.0,
    )


def score(point: float, truth: TruthRecord, estimand: str = "SATT"):
    """Standardized bias (and its square) of one estimate."""
    target = truth.true_satt if estimand == "SATT" else truth.true_sate
    bias = (point - target) / truth.outcome_sd
    return bias, bias * bias


def aggregate_bias(biases) -> dict:
    """Mean / SD / RMSE over the solved replications only."""
    b = np.asarray(list(biases), dtype=float)
    if b.size == 0:
        return {"n": 0, "mean_bias": float("nan"), "sd_bias": float("nan"),
                "rmse": float("nan")}
    return {
        "n": int(b.size),
        "mean_bias": float(b.mean()),
        "sd_bias": float(b.std(ddof=1)) if b.size > 1 else 0.0,
        "rmse": float(np.sqrt((b * b).mean())),
    }
