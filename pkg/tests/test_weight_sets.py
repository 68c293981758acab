"""Weight-set membership and projections, checked against exact
support-enumeration oracles and convexity properties."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from balancekit.exceptions import BalanceKitError, InfeasibleProblemError
from balancekit.weight_sets import (WeightSet, contains, nearest_subset,
                                    project, project_box_simplex,
                                    project_simplex)


def oracle_project_simplex(v):
    """Exact simplex projection by enumerating active supports.

    On a support S the projection is v_i - theta with theta chosen so the
    support sums to one; the KKT conditions (positivity on S, v_j <= theta
    off S) identify the unique valid support.
    """
    n = v.size
    best, best_d = None, np.inf
    for r in range(1, n + 1):
        for S in itertools.combinations(range(n), r):
            S = list(S)
            theta = (v[S].sum() - 1.0) / len(S)
            w = np.zeros(n)
            w[S] = v[S] - theta
            if (w[S] <= 0).any():
                continue
            off = [j for j in range(n) if j not in S]
            if off and (v[off] - theta > 1e-12).any():
                continue
            d = np.sum((w - v) ** 2)
            if d < best_d:
                best, best_d = w, d
    return best


def oracle_project_box_simplex(v, b):
    """Exact capped-simplex projection by enumerating zero/cap/free splits."""
    n = v.size
    best, best_d = None, np.inf
    for labels in itertools.product((0, 1, 2), repeat=n):  # 0=zero 1=free 2=cap
        free = [i for i in range(n) if labels[i] == 1]
        cap = [i for i in range(n) if labels[i] == 2]
        s_cap = b * len(cap)
        if not free:
            if abs(s_cap - 1.0) > 1e-12:
                continue
            theta_lo, theta_hi = -np.inf, np.inf
        else:
            theta = (v[free].sum() + s_cap - 1.0) / len(free)
            theta_lo = theta_hi = theta
        w = np.zeros(n)
        w[cap] = b
        if free:
            w[free] = v[free] - theta_lo
            if (w[free] < -1e-12).any() or (w[free] > b + 1e-12).any():
                continue
        # KKT: zeros need theta >= v_i, caps need theta <= v_i - b
        zeros = [i for i in range(n) if labels[i] == 0]
        theta_min = max((v[i] for i in zeros), default=-np.inf)
        theta_max = min((v[i] - b for i in cap), default=np.inf)
        if free:
            if theta_lo < theta_min - 1e-12 or theta_lo > theta_max + 1e-12:
                continue
        elif theta_min > theta_max + 1e-12:
            continue
        d = np.sum((w - v) ** 2)
        if d < best_d:
            best, best_d = w, d
    return best


class TestWeightSetValidation:
    def test_unknown_kind(self):
        with pytest.raises(BalanceKitError, match="unknown weight set"):
            WeightSet("orthant", 3)

    def test_b_simplex_bounds(self):
        with pytest.raises(BalanceKitError):
            WeightSet("b-simplex", 3, b=1.5)
        with pytest.raises(InfeasibleProblemError, match="infeasible"):
            WeightSet("b-simplex", 3, b=0.2)  # 0.2 * 3 < 1

    def test_subset_needs_n_prime(self):
        with pytest.raises(BalanceKitError):
            WeightSet("subset", 5)
        with pytest.raises(BalanceKitError, match="exceeds dim"):
            WeightSet("subset", 5, n_prime=6)

    def test_uniform_is_member(self):
        for wset in (WeightSet("simplex", 4), WeightSet("b-simplex", 4, b=0.5),
                     WeightSet("subset", 4, n_prime=2),
                     WeightSet("geq-subset", 4, n_prime=2),
                     WeightSet("multisubset", 4, n_prime=2)):
            assert contains(wset.uniform(), wset)


class TestContains:
    def test_simplex(self):
        wset = WeightSet("simplex", 3)
        assert contains([0.2, 0.3, 0.5], wset)
        assert not contains([0.2, 0.3, 0.6], wset)
        assert not contains([-0.1, 0.5, 0.6], wset)

    def test_b_simplex(self):
        wset = WeightSet("b-simplex", 3, b=0.5)
        assert contains([0.5, 0.3, 0.2], wset)
        assert not contains([0.6, 0.2, 0.2], wset)

    def test_subset_kinds(self):
        assert contains([0.5, 0, 0.5, 0], WeightSet("subset", 4, n_prime=2))
        assert not contains([0.5, 0.25, 0.25, 0], WeightSet("subset", 4, n_prime=2))
        # geq-subset admits any cardinality >= n'
        geq = WeightSet("geq-subset", 4, n_prime=2)
        assert contains([1 / 3, 1 / 3, 1 / 3, 0], geq)
        assert not contains([1.0, 0, 0, 0], geq)
        # multisubset admits repeats on the 1/n' grid
        multi = WeightSet("multisubset", 4, n_prime=2)
        assert contains([1.0, 0, 0, 0], multi)
        assert contains([0.5, 0.5, 0, 0], multi)
        assert not contains([0.4, 0.6, 0, 0], multi)

    def test_dimension_mismatch(self):
        with pytest.raises(BalanceKitError, match="length"):
            contains([0.5, 0.5], WeightSet("simplex", 3))


class TestSimplexProjection:
    def test_matches_support_enumeration_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            dim = int(rng.integers(1, 7))
            v = rng.normal(scale=2.0, size=dim)
            np.testing.assert_allclose(project_simplex(v),
                                       oracle_project_simplex(v), atol=1e-9)

    def test_feasible_point_is_fixed(self):
        w = np.array([0.1, 0.2, 0.7])
        np.testing.assert_allclose(project_simplex(w), w, atol=1e-12)

    def test_nonfinite_rejected(self):
        with pytest.raises(BalanceKitError):
            project_simplex([np.nan, 0.5])

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-100, 100), min_size=1, max_size=12))
    def test_output_always_on_simplex(self, vals):
        w = project_simplex(np.array(vals))
        assert abs(w.sum() - 1.0) < 1e-9
        assert (w >= -1e-12).all()

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 10))
    def test_nonexpansive(self, seed, dim):
        rng = np.random.default_rng(seed)
        u, v = rng.normal(size=dim), rng.normal(size=dim)
        du = np.linalg.norm(project_simplex(u) - project_simplex(v))
        assert du <= np.linalg.norm(u - v) + 1e-10


class TestBoxSimplexProjection:
    def test_matches_partition_enumeration_oracle(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            dim = int(rng.integers(2, 7))
            b = float(rng.uniform(1.0 / dim, 1.0))
            v = rng.normal(scale=1.5, size=dim)
            np.testing.assert_allclose(project_box_simplex(v, b),
                                       oracle_project_box_simplex(v, b), atol=1e-9)

    def test_reduces_to_simplex_when_cap_is_one(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            v = rng.normal(size=5)
            np.testing.assert_allclose(project_box_simplex(v, 1.0),
                                       project_simplex(v), atol=1e-9)

    def test_infeasible_cap(self):
        with pytest.raises(InfeasibleProblemError):
            project_box_simplex(np.zeros(3), 0.2)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 10))
    def test_output_always_feasible(self, seed, dim):
        rng = np.random.default_rng(seed)
        b = float(rng.uniform(1.0 / dim, 1.0))
        w = project_box_simplex(rng.normal(scale=3.0, size=dim), b)
        assert abs(w.sum() - 1.0) < 1e-8
        assert (w >= -1e-12).all() and (w <= b + 1e-12).all()


class TestNearestSubset:
    def test_matches_enumeration(self):
        rng = np.random.default_rng(10)
        for _ in range(30):
            dim = int(rng.integers(2, 8))
            n_prime = int(rng.integers(1, dim + 1))
            v = rng.normal(size=dim)
            best, best_d = None, np.inf
            for S in itertools.combinations(range(dim), n_prime):
                w = np.zeros(dim)
                w[list(S)] = 1.0 / n_prime
                d = np.sum((w - v) ** 2)
                if d < best_d - 1e-15:
                    best, best_d = w, d
            np.testing.assert_allclose(nearest_subset(v, n_prime), best, atol=1e-12)

    def test_ties_go_to_lowest_index(self):
        w = nearest_subset(np.array([0.5, 0.5, 0.5, 0.5]), 2)
        np.testing.assert_allclose(w, [0.5, 0.5, 0.0, 0.0])

    def test_n_prime_too_large(self):
        with pytest.raises(BalanceKitError):
            nearest_subset(np.zeros(3), 4)


class TestDispatch:
    def test_project_routes_by_kind(self):
        v = np.array([0.9, -0.2, 0.4])
        np.testing.assert_allclose(project(v, WeightSet("general", 3)), v)
        np.testing.assert_allclose(project(v, WeightSet("simplex", 3)),
                                   project_simplex(v))
        np.testing.assert_allclose(project(v, WeightSet("b-simplex", 3, b=0.6)),
                                   project_box_simplex(v, 0.6))
        np.testing.assert_allclose(project(v, WeightSet("subset", 3, n_prime=1)),
                                   nearest_subset(v, 1))

    def test_no_projection_for_geq_subset(self):
        with pytest.raises(BalanceKitError, match="no projection"):
            project(np.zeros(3), WeightSet("geq-subset", 3, n_prime=2))

    def test_idempotence(self):
        rng = np.random.default_rng(11)
        for wset in (WeightSet("simplex", 5), WeightSet("b-simplex", 5, b=0.4),
                     WeightSet("subset", 5, n_prime=2)):
            v = rng.normal(size=5)
            once = project(v, wset)
            np.testing.assert_allclose(project(once, wset), once, atol=1e-9)
