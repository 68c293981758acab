"""Imbalance measures: weighted mean differences, bin-count discrepancy
for subset selection, and Gaussian-kernel discrepancies (MMD)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .data import Dataset, DesignMatrix, GroupPair, NUMERIC_ROLES
from .exceptions import BalanceKitError


@dataclass(frozen=True)
class KernelSpec:
    """Gaussian kernel with an explicit bandwidth or the median heuristic."""

    kind: str = "gaussian"
    bandwidth: Union[float, str] = "median-heuristic"

    def __post_init__(self):
        if self.kind != "gaussian":
            raise BalanceKitError(f"unsupported kernel kind {self.kind!r}")
        if isinstance(self.bandwidth, str):
            if self.bandwidth != "median-heuristic":
                raise BalanceKitError(f"unknown bandwidth rule {self.bandwidth!r}")
        elif self.bandwidth <= 0:
            raise BalanceKitError("bandwidth must be positive")


def resolve_bandwidth(X, spec: KernelSpec) -> float:
    """Median pairwise Euclidean distance over at most 1,000 sampled pairs.

    Deterministic: pairs are drawn with a fixed-seed generator, once.
    """
    if not isinstance(spec.bandwidth, str):
        return float(spec.bandwidth)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    rng = np.random.default_rng(0)
    total = n * (n - 1) // 2
    if total <= 1000:
        ii, jj = np.triu_indices(n, k=1)
    else:
        ii = rng.integers(0, n, size=1000)
        jj = rng.integers(0, n, size=1000)
        keep = ii != jj
        ii, jj = ii[keep], jj[keep]
    d = np.linalg.norm(X[ii] - X[jj], axis=1)
    med = float(np.median(d))
    return med if med > 0 else 1.0


def kernel_matrix(Xa, Xb, spec: KernelSpec, sigma: Optional[float] = None) -> np.ndarray:
    """Gram matrix k(Xa_i, Xb_j) = exp(-||Xa_i - Xb_j||^2 / (2 sigma^2)).

    Pass a resolved ``sigma`` to avoid re-running the median heuristic on
    each block; otherwise it is resolved on the stacked rows.
    """
    Xa = np.atleast_2d(np.asarray(Xa, dtype=float))
    Xb = np.atleast_2d(np.asarray(Xb, dtype=float))
    if Xa.shape[1] != Xb.shape[1]:
        raise BalanceKitError("kernel inputs must have equal column counts")
    if sigma is None:
        sigma = resolve_bandwidth(np.vstack([Xa, Xb]), spec)
    if sigma <= 0:
        raise BalanceKitError("kernel bandwidth must be positive")
    sq = (
        (Xa * Xa).sum(axis=1)[:, None]
        + (Xb * Xb).sum(axis=1)[None, :]
        - 2.0 * (Xa @ Xb.T)
    )
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-sq / (2.0 * sigma * sigma))


def mean_imbalance(design: DesignMatrix, pair: GroupPair, w) -> np.ndarray:
    """Absolute gap between w-weighted U means and uniform V means, per column.

    w is normalized to sum one first (its sum must be positive).
    """
    w = np.asarray(w, dtype=float)
    if w.shape != (pair.u_indices.size,):
        raise BalanceKitError("weight length must equal |U|")
    s = w.sum()
    if s <= 0:
        raise BalanceKitError("weights must have positive sum")
    wn = w / s
    A = design.matrix[pair.u_indices]
    b = design.matrix[pair.v_indices].mean(axis=0)
    return np.abs(A.T @ wn - b)


@dataclass(frozen=True)
class BinningSpec:
    """Per-covariate bin edges (interior cut points) keyed by column name.

    Continuous and count columns get real-valued edges; binary and
    categorical columns bin by exact value and need no entry.
    """

    edges: dict

    def __post_init__(self):
        for name, e in self.edges.items():
            e = np.asarray(e, dtype=float)
            if e.size and not (np.diff(e) > 0).all():
                raise BalanceKitError(f"bin edges for {name!r} must be strictly increasing")


def default_bins(dataset: Dataset, pair: GroupPair, n_bins: int = 5) -> BinningSpec:
    """Quintile edges per numeric covariate, computed on the V group."""
    edges = {}
    V = dataset.covariates[pair.v_indices]
    for j, col in enumerate(dataset.columns):
        if col.role in NUMERIC_ROLES:
            qs = np.quantile(V[:, j], np.linspace(0, 1, n_bins + 1)[1:-1])
            edges[col.name] = np.unique(qs)
    return BinningSpec(edges)


def _bin_codes(dataset: Dataset, bins: BinningSpec) -> list[np.ndarray]:
    codes = []
    for j, col in enumerate(dataset.columns):
        x = dataset.covariates[:, j]
        if col.role in NUMERIC_ROLES and col.name in bins.edges:
            codes.append(np.digitize(x, np.asarray(bins.edges[col.name], dtype=float)))
        else:
            _, inv = np.unique(x, return_inverse=True)
            codes.append(inv)
    return codes


def boss_objective(dataset: Dataset, pair: GroupPair, selected, bins: BinningSpec) -> float:
    """Standardized squared bin-count discrepancy of a selected U subset.

    For each covariate bin, compares the number of selected U subjects to
    the V count, normalizing by max(V count, 1), and sums over all bins
    of all covariates.
    """
    selected = np.asarray(sorted(selected), dtype=int)
    if selected.size == 0:
        raise BalanceKitError("selected subset must be nonempty")
    if bins is None or (not bins.edges and not dataset.columns):
        raise BalanceKitError("empty bin specification")
    codes = _bin_codes(dataset, bins)
    total = 0.0
    for code in codes:
        nbins = int(code.max()) + 1
        sel_counts = np.bincount(code[selected], minlength=nbins)
        v_counts = np.bincount(code[pair.v_indices], minlength=nbins)
        diff = sel_counts - v_counts
        total += float((diff * diff / np.maximum(v_counts, 1)).sum())
    return total


def mmd_squared(X, pair: GroupPair, w, spec: KernelSpec, sigma: Optional[float] = None) -> float:
    """Squared kernel discrepancy between w-weighted U and uniform V.

    Includes the V-V constant so the value is a true squared MMD and
    therefore nonnegative (up to roundoff) for any simplex w.
    """
    X = np.asarray(X, dtype=float)
    w = np.asarray(w, dtype=float)
    if abs(w.sum() - 1.0) > 1e-8 or (w < -1e-8).any():
        raise BalanceKitError("weights must lie on the simplex (tol 1e-8)")
    Xu = X[pair.u_indices]
    Xv = X[pair.v_indices]
    if sigma is None:
        sigma = resolve_bandwidth(np.vstack([Xu, Xv]), spec)
    Kuu = kernel_matrix(Xu, Xu, spec, sigma=sigma)
    Kuv = kernel_matrix(Xu, Xv, spec, sigma=sigma)
    Kvv = kernel_matrix(Xv, Xv, spec, sigma=sigma)
    nv = pair.v_indices.size
    return float(w @ Kuu @ w - (2.0 / nv) * (w @ Kuv.sum(axis=1)) + Kvv.sum() / (nv * nv))
