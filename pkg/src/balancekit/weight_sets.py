"""Feasible weight sets: membership tests and Euclidean projections.

Six families are supported: general (all of R^dim), the probability
simplex, the b-capped simplex, exact n'-subsets (weights in {0, 1/n'}),
geq-subsets (any cardinality >= n') and multisubsets (weights in
{0, 1/n', 2/n', ...}). The convex projections back the projected-gradient
solvers; the subset families are handled by combinatorial search.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exceptions import BalanceKitError, InfeasibleProblemError

CONVEX_KINDS = ("general", "simplex", "b-simplex")
SUBSET_KINDS = ("subset", "geq-subset", "multisubset")


@dataclass(frozen=True)
class WeightSet:
    kind: str
    dim: int
    b: Optional[float] = None
    n_prime: Optional[int] = None

    def __post_init__(self):
        if self.kind not in CONVEX_KINDS + SUBSET_KINDS:
            raise BalanceKitError(f"unknown weight set kind {self.kind!r}")
        if self.dim < 1:
            raise BalanceKitError("dim must be positive")
        if self.kind == "b-simplex":
            if self.b is None or not (0 < self.b <= 1):
                raise BalanceKitError("b-simplex needs b in (0, 1]")
            if self.b * self.dim < 1:
                raise InfeasibleProblemError(f"b-simplex infeasible: b*dim = {self.b * self.dim} < 1")
        if self.kind in SUBSET_KINDS:
            if self.n_prime is None or self.n_prime < 1:
                raise BalanceKitError(f"{self.kind} needs a positive n_prime")
            if self.kind != "multisubset" and self.n_prime > self.dim:
                raise BalanceKitError("n_prime exceeds dim")

    def uniform(self) -> np.ndarray:
        """The canonical element (uniform over the first n' coordinates for subsets)."""
        if self.kind == "general" or self.kind == "simplex":
            return np.full(self.dim, 1.0 / self.dim)
        if self.kind == "b-simplex":
            return np.full(self.dim, 1.0 / self.dim)  # feasible since b*dim >= 1
        w = np.zeros(self.dim)
        w[: self.n_prime] = 1.0 / self.n_prime
        return w


def contains(w, wset: WeightSet, tol: float = 1e-8) -> bool:
    """True iff w lies in the set up to `tol` on sums, bounds and grid values."""
    w = np.asarray(w, dtype=float)
    if w.shape != (wset.dim,):
        raise BalanceKitError(f"weight vector has length {w.size}, set has dim {wset.dim}")
    if wset.kind == "general":
        return bool(np.isfinite(w).all())
    if abs(w.sum() - 1.0) > tol or (w < -tol).any():
        return False
    if wset.kind == "simplex":
        return True
    if wset.kind == "b-simplex":
        return bool((w <= wset.b + tol).all())
    if wset.kind == "multisubset":
        grid = np.round(w * wset.n_prime)
        return bool(np.abs(w * wset.n_prime - grid).max() <= tol * wset.n_prime)
    # subset / geq-subset: entries in {0, 1/n''} for the right n''
    if wset.kind == "subset":
        cards = [wset.n_prime]
    else:
        cards = range(wset.n_prime, wset.dim + 1)
    for npp in cards:
        ref = 1.0 / npp
        ok = (np.abs(w) <= tol) | (np.abs(w - ref) <= tol)
        if ok.all() and abs(np.sum(np.abs(w) > tol) - npp) == 0:
            return True
    return False


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto the probability simplex.

    Sort-based thresholding: w_i = max(v_i - theta, 0) with theta chosen
    so the positive part sums to one.
    """
    v = np.asarray(v, dtype=float)
    if not np.isfinite(v).all():
        raise BalanceKitError("non-finite input to simplex projection")
    n = v.size
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    rho = np.max(np.flatnonzero(u * np.arange(1, n + 1) > css)) + 1
    theta = css[rho - 1] / rho
    return np.maximum(v - theta, 0.0)


def project_box_simplex(v, b: float) -> np.ndarray:
    """Euclidean projection onto simplex ∩ [0, b]^dim via bisection.

    The projection is w_i = clip(v_i - theta, 0, b); theta is the root of
    the monotone map theta -> sum(clip(v - theta, 0, b)) - 1.
    """
    v = np.asarray(v, dtype=float)
    if not np.isfinite(v).all():
        raise BalanceKitError("non-finite input to box-simplex projection")
    if b * v.size < 1:
        raise InfeasibleProblemError(f"b-simplex infeasible: b*dim = {b * v.size} < 1")

    def total(theta):
        return np.clip(v - theta, 0.0, b).sum()

    lo, hi = v.min() - b, v.max()
    # total(lo) >= size*min(b, ...) >= 1, total(hi) = 0 <= 1
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if total(mid) > 1.0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15 * max(1.0, abs(hi)):
            break
    theta = 0.5 * (lo + hi)
    w = np.clip(v - theta, 0.0, b)
    s = w.sum()
    if s > 0:  # polish the sum on the free (strictly interior) coordinates
        free = (w > 0) & (w < b)
        if free.any():
            w[free] += (1.0 - s) / free.sum()
            w = np.clip(w, 0.0, b)
    return w


def nearest_subset(v, n_prime: int) -> np.ndarray:
    """Nearest point of the exact-subset set: 1/n' on the n' largest entries.

    Ties go to the lowest index, making the result deterministic.
    """
    v = np.asarray(v, dtype=float)
    if n_prime > v.size:
        raise BalanceKitError("n_prime exceeds dimension")
    # stable sort on (-value, index) implements the lowest-index tie rule
    order = np.lexsort((np.arange(v.size), -v))
    w = np.zeros(v.size)
    w[order[:n_prime]] = 1.0 / n_prime
    return w


def project(v, wset: WeightSet) -> np.ndarray:
    """Dispatch to the set's projection (convex sets and exact subsets)."""
    if wset.kind == "general":
        return np.asarray(v, dtype=float).copy()
    if wset.kind == "simplex":
        return project_simplex(v)
    if wset.kind == "b-simplex":
        return project_box_simplex(v, wset.b)
    if wset.kind == "subset":
        return nearest_subset(v, wset.n_prime)
    raise BalanceKitError(f"no projection for weight set kind {wset.kind!r}")
