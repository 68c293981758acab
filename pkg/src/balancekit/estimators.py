"""Scikit-learn style estimator wrappers.

Each balancer follows the fit/get_params protocol: ``fit(X, z)`` takes a
covariate matrix and binary treatment vector, runs preprocessing, builds
the estimand's (U, V) group pairs, solves for weights and exposes them
as fitted attributes. This lets the methods drop into pipelines and
hyperparameter search alongside the rest of the ecosystem; the
functional API in ``balancekit.methods`` remains available underneath.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .data import ColumnInfo, Dataset, EstimandSpec, PreprocessSpec, build_groups, preprocess
from .exceptions import BalanceKitError
from .methods import FeatureSpec, cbps_exact, ebal, kom, sbw
from .metrics import KernelSpec
from .solvers import SolverOptions


class BaseBalancer(BaseEstimator):
    """Common fit machinery: validate, preprocess, solve per group pair.

    Fitted attributes: ``solutions_`` (one WeightSolution per pair),
    ``pairs_``, ``weights_`` (weights of the control-side pair, the one
    used for SATT), and ``design_``.
    """

    def __init__(self, estimand="SATT", standardize=True, seed=0):
        self.estimand = estimand
        self.standardize = standardize
        self.seed = seed

    def _dataset(self, X, z):
        X = check_array(X, dtype=float)
        z = np.asarray(z)
        cols = [ColumnInfo(f"x{j}", "continuous") for j in range(X.shape[1])]
        return Dataset(X, z, columns=cols)

    def fit(self, X, z):
        dataset = self._dataset(X, z).design_view()
        design = preprocess(dataset, PreprocessSpec(standardize=self.standardize))
        pairs = build_groups(dataset, EstimandSpec(self.estimand))
        self.design_ = design
        self.pairs_ = pairs
        self.solutions_ = [self._solve(design, dataset, pair) for pair in pairs]
        control = [s for p, s in zip(pairs, self.solutions_) if p.role == "control-side"]
        self.weights_ = control[0].weights if control else self.solutions_[0].weights
        return self

    def _solve(self, design, dataset, pair):
        raise NotImplementedError


class EntropyBalancer(BaseBalancer):
    """Maximum-entropy weights with exact mean balance."""

    def __init__(self, estimand="SATT", standardize=True, seed=0, basis="raw"):
        super().__init__(estimand=estimand, standardize=standardize, seed=seed)
        self.basis = basis

    def _solve(self, design, dataset, pair):
        return ebal(design, pair, FeatureSpec(self.basis),
                    opts=SolverOptions(seed=self.seed))


class StableBalancer(BaseBalancer):
    """Minimum-variance weights under per-feature slack tolerances."""

    def __init__(self, estimand="SATT", standardize=True, seed=0, basis="raw",
                 delta=0.02):
        super().__init__(estimand=estimand, standardize=standardize, seed=seed)
        self.basis = basis
        self.delta = delta

    def _solve(self, design, dataset, pair):
        return sbw(design, pair, FeatureSpec(self.basis), deltas=self.delta,
                   opts=SolverOptions(seed=self.seed))


class KernelBalancer(BaseBalancer):
    """Simplex weights minimizing the Gaussian-kernel discrepancy."""

    def __init__(self, estimand="SATT", standardize=True, seed=0,
                 bandwidth="median-heuristic", cross_coefficient="standard"):
        super().__init__(estimand=estimand, standardize=standardize, seed=seed)
        self.bandwidth = bandwidth
        self.cross_coefficient = cross_coefficient

    def _solve(self, design, dataset, pair):
        return kom(design, pair, KernelSpec(bandwidth=self.bandwidth),
                   cross_coefficient=self.cross_coefficient,
                   opts=SolverOptions(seed=self.seed))


class PropensityOddsBalancer(BaseBalancer):
    """Exact-balance logistic odds weights over the controls (SATT only)."""

    def __init__(self, standardize=True, seed=0):
        super().__init__(estimand="SATT", standardize=standardize, seed=seed)

    def _solve(self, design, dataset, pair):
        return cbps_exact(design, dataset, pair, opts=SolverOptions(seed=self.seed))


def estimate_effect(balancer, X, z, y):
    """Weighted difference in means from a fitted (or unfitted) balancer."""
    if not hasattr(balancer, "solutions_"):
        balancer.fit(X, z)
    check_is_fitted(balancer, "solutions_")
    y = np.asarray(y, dtype=float)
    z = np.asarray(z)
    if balancer.estimand == "SATT":
        pair = balancer.pairs_[0]
        w = balancer.weights_ / balancer.weights_.sum()
        return float(y[z == 1].mean() - w @ y[pair.u_indices])
    parts = {}
    for pair, sol in zip(balancer.pairs_, balancer.solutions_):
        w = sol.weights / sol.weights.sum()
        parts[pair.role] = float(w @ y[pair.u_indices])
    if "treated-side" not in parts or "control-side" not in parts:
        raise BalanceKitError("need both group pairs to form the estimate")
    return parts["treated-side"] - parts["control-side"]
