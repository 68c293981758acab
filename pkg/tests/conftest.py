"""Shared test helpers: random problem instances and finite differences."""

import numpy as np
import pytest

from balancekit.data import (ColumnInfo, Dataset, EstimandSpec, PreprocessSpec,
                             build_groups, preprocess)


def make_dataset(X, z, y=None):
    """Dataset with all-continuous column roles."""
    X = np.asarray(X, dtype=float)
    cols = [ColumnInfo(f"x{j}", "continuous") for j in range(X.shape[1])]
    return Dataset(X, z, outcome=y, columns=cols)


def random_satt_instance(rng, n=None, k=None, with_outcome=False):
    """A random dataset with overlapping groups plus its SATT design/pair.

    Treatment is assigned by a weak logistic rule so that both groups span
    the covariate space and exact mean balance is achievable.
    """
    k = k if k is not None else int(rng.integers(1, 11))
    n = n if n is not None else int(rng.integers(30 * k + 40, 501))
    X = rng.standard_normal((n, k))
    logits = X @ rng.normal(scale=0.3, size=k)
    z = (rng.random(n) < 1.0 / (1.0 + np.exp(-logits))).astype(int)
    # guarantee a comfortable control majority
    if z.sum() < k + 2 or (n - z.sum()) < 3 * k + 5:
        z = np.zeros(n, dtype=int)
        z[: max(k + 2, n // 4)] = 1
        rng.shuffle(z)
    y = X @ rng.normal(size=k) + rng.standard_normal(n) if with_outcome else None
    dataset = make_dataset(X, z, y)
    design = preprocess(dataset, PreprocessSpec(standardize=True))
    pair = build_groups(dataset, EstimandSpec("SATT"))[0]
    return dataset, design, pair


def central_diff_grad(f, x, eps=1e-6):
    """Central-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = eps
        g[i] = (f(x + e) - f(x - e)) / (2 * eps)
    return g


def central_diff_jac(g, x, eps=1e-6):
    """Central-difference Jacobian of a vector function."""
    x = np.asarray(x, dtype=float)
    g0 = np.asarray(g(x), dtype=float)
    J = np.zeros((g0.size, x.size))
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = eps
        J[:, i] = (np.asarray(g(x + e)) - np.asarray(g(x - e))) / (2 * eps)
    return J


def rel_err(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.abs(a - b).max() / max(np.abs(b).max(), 1e-12)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
