"""The balancing-method catalog: exact balance, optimality, equivalences,
invariances and failure reporting."""

import itertools
import json

import numpy as np
import pytest
from scipy.optimize import minimize

from balancekit.data import (ColumnInfo, Dataset, EstimandSpec, GroupPair,
                             PreprocessSpec, build_groups, preprocess)
from balancekit.exceptions import BalanceKitError, InfeasibleProblemError
from balancekit.methods import (FeatureSpec, WeightSolution, arb_satt, boss,
                                build_features, cbps_exact, cbsr_sate, ebal,
                                ipw_weights, kom, mipmatch_lite, normalized,
                                sbw)
from balancekit.metrics import (BinningSpec, KernelSpec, boss_objective,
                                default_bins, mean_imbalance, mmd_squared)
from balancekit.solvers import SolverOptions, subset_search
from balancekit.weight_sets import WeightSet, project_simplex
from tests.conftest import central_diff_jac, make_dataset, random_satt_instance, rel_err


def two_point_instance():
    """Controls at x = 0 and x = 1; the treated mean is 0.75, so entropy
    balancing must put weights (1/4, 3/4) on the controls."""
    X = np.array([[0.0], [1.0], [0.5], [1.0]])
    z = np.array([0, 0, 1, 1])
    ds = Dataset(X, z, columns=[ColumnInfo("x", "continuous")])
    design = preprocess(ds, PreprocessSpec(standardize=False))
    pair = build_groups(ds, EstimandSpec("SATT"))[0]
    return ds, design, pair


class TestFeatures:
    def test_basis_expansion_names_and_shapes(self, rng):
        _, design, _ = random_satt_instance(rng, n=30, k=3)
        Phi, names = build_features(design, FeatureSpec("raw+squares"))
        assert Phi.shape[1] == 6
        assert names[3:] == ["x0^2", "x1^2", "x2^2"]
        Phi2, names2 = build_features(design, FeatureSpec("raw+squares+interactions"))
        assert Phi2.shape[1] == 6 + 3
        assert "x0*x1" in names2
        np.testing.assert_allclose(Phi2[:, names2.index("x0*x1")],
                                   design.matrix[:, 0] * design.matrix[:, 1])

    def test_kernel_basis(self, rng):
        _, design, _ = random_satt_instance(rng, n=15, k=2)
        Phi, names = build_features(design, FeatureSpec("kernel", kernel=KernelSpec()))
        assert Phi.shape == (15, 15)
        np.testing.assert_allclose(np.diag(Phi), 1.0)

    def test_intercept_column_excluded(self, rng):
        dataset, _, _ = random_satt_instance(rng, n=20, k=2)
        design = preprocess(dataset, PreprocessSpec(add_intercept=True))
        Phi, names = build_features(design)
        assert "(intercept)" not in names
        assert Phi.shape[1] == 2

    def test_spec_validation(self):
        with pytest.raises(BalanceKitError):
            FeatureSpec("raw+cubes")
        with pytest.raises(BalanceKitError):
            FeatureSpec("kernel")
        with pytest.raises(BalanceKitError):
            FeatureSpec("raw", kernel=KernelSpec())


class TestEbal:
    def test_two_point_closed_form(self):
        _, design, pair = two_point_instance()
        sol = ebal(design, pair)
        np.testing.assert_allclose(sol.weights, [0.25, 0.75], atol=1e-9)
        assert sol.balance_report.max() <= 1e-9

    def test_exact_balance_on_random_instances(self, rng):
        for _ in range(20):
            _, design, pair = random_satt_instance(rng)
            sol = ebal(design, pair)
            assert sol.balance_report.max() <= 1e-8
            assert abs(sol.weights.sum() - 1.0) <= 1e-9
            assert (sol.weights > 0).all()

    def test_higher_order_features_balanced_too(self, rng):
        _, design, pair = random_satt_instance(rng, n=200, k=3)
        sol = ebal(design, pair, FeatureSpec("raw+squares"))
        assert sol.balance_report.size == 6
        assert sol.balance_report.max() <= 1e-8

    def test_custom_base_weights_respected(self, rng):
        _, design, pair = random_satt_instance(rng, n=80, k=2)
        m = pair.u_indices.size
        q = rng.random(m) + 0.5
        q /= q.sum()
        sol = ebal(design, pair, base_weights=q)
        # solution has exponential-tilt form w_i ∝ q_i exp(lam . phi_i)
        Phi = design.matrix[pair.u_indices]
        lam = sol.extras["duals"]
        tilt = q * np.exp(Phi @ lam)
        np.testing.assert_allclose(sol.weights, tilt / tilt.sum(), atol=1e-9)

    def test_infeasible_raises(self):
        # the treated mean (2.0) lies outside the control range [0, 1]
        X = np.array([[0.0], [1.0], [2.0], [2.0]])
        ds = Dataset(X, [0, 0, 1, 1], columns=[ColumnInfo("x", "continuous")])
        design = preprocess(ds, PreprocessSpec(standardize=False))
        pair = build_groups(ds, EstimandSpec("SATT"))[0]
        with pytest.raises(InfeasibleProblemError):
            ebal(design, pair)

    def test_scale_invariance_under_standardization(self, rng):
        dataset, _, _ = random_satt_instance(rng, n=100, k=3)
        scaled = make_dataset(dataset.covariates * np.array([10.0, 0.01, 1.0]),
                              dataset.treatment)
        pair = build_groups(dataset, EstimandSpec("SATT"))[0]
        w1 = ebal(preprocess(dataset), pair).weights
        w2 = ebal(preprocess(scaled), pair).weights
        np.testing.assert_allclose(w1, w2, atol=1e-8)

    def test_duplicate_column_invariance(self, rng):
        dataset, _, _ = random_satt_instance(rng, n=100, k=2)
        dup = make_dataset(np.column_stack([dataset.covariates,
                                            dataset.covariates[:, 0]]),
                           dataset.treatment)
        pair = build_groups(dataset, EstimandSpec("SATT"))[0]
        w1 = ebal(preprocess(dataset), pair).weights
        w2 = ebal(preprocess(dup), pair).weights
        np.testing.assert_allclose(w1, w2, atol=1e-8)


class TestSbw:
    def test_zero_slack_recovers_exact_balance(self, rng):
        _, design, pair = random_satt_instance(rng, n=150, k=3)
        sol = sbw(design, pair, deltas=0.0)
        assert sol.balance_report.max() <= 1e-7

    def test_slacks_within_tolerance(self, rng):
        _, design, pair = random_satt_instance(rng, n=150, k=4)
        sol = sbw(design, pair, deltas=0.02)
        assert (sol.extras["achieved_slacks"] <= 0.02 + 1e-7).all()

    def test_matches_slsqp_oracle(self, rng):
        # independent solve of min ||w||^2 s.t. simplex and |Aw - b| <= delta
        _, design, pair = random_satt_instance(rng, n=60, k=2)
        delta = 0.05
        sol = sbw(design, pair, deltas=delta)
        A = design.matrix[pair.u_indices].T
        b = design.matrix[pair.v_indices].mean(axis=0)
        m = pair.u_indices.size
        cons = [
            {"type": "eq", "fun": lambda w: w.sum() - 1.0},
            {"type": "ineq", "fun": lambda w: delta - (A @ w - b)},
            {"type": "ineq", "fun": lambda w: delta + (A @ w - b)},
        ]
        ref = minimize(lambda w: w @ w, np.full(m, 1.0 / m), method="SLSQP",
                       bounds=[(0, 1)] * m, constraints=cons,
                       options={"maxiter": 1000, "ftol": 1e-14})
        assert ref.success
        assert sol.weights @ sol.weights <= ref.x @ ref.x + 1e-6

    def test_looser_slack_never_increases_variance(self, rng):
        _, design, pair = random_satt_instance(rng, n=120, k=3)
        tight = sbw(design, pair, deltas=0.0)
        loose = sbw(design, pair, deltas=0.1)
        assert loose.diagnostics.objective <= tight.diagnostics.objective + 1e-8

    def test_infeasible_names_worst_feature(self):
        X = np.array([[0.0], [0.0], [0.0], [1.0], [1.0]])
        ds = Dataset(X, [0, 0, 0, 1, 1], columns=[ColumnInfo("sep", "binary")])
        design = preprocess(ds)
        pair = build_groups(ds, EstimandSpec("SATT"))[0]
        with pytest.raises(InfeasibleProblemError) as exc:
            sbw(design, pair, deltas=0.0)
        assert exc.value.worst_feature == "sep"
        assert exc.value.residual == pytest.approx(1.0, abs=1e-6)

    def test_negative_delta_rejected(self, rng):
        _, design, pair = random_satt_instance(rng, n=40, k=2)
        with pytest.raises(BalanceKitError):
            sbw(design, pair, deltas=-0.1)


class TestKom:
    def test_minimizes_kernel_discrepancy(self, rng):
        _, design, pair = random_satt_instance(rng, n=80, k=3)
        sol = kom(design, pair)
        sigma = sol.extras["sigma"]
        achieved = sol.extras["mmd_squared"]
        m = pair.u_indices.size
        uniform = np.full(m, 1.0 / m)
        assert achieved <= mmd_squared(design.matrix, pair, uniform,
                                       KernelSpec(), sigma=sigma) + 1e-12
        for _ in range(50):
            w = project_simplex(rng.normal(size=m))
            assert achieved <= mmd_squared(design.matrix, pair, w,
                                           KernelSpec(), sigma=sigma) + 1e-10

    def test_converges_on_ill_conditioned_kernels(self, rng):
        _, design, pair = random_satt_instance(rng, n=120, k=5)
        sol = kom(design, pair)
        assert sol.diagnostics.converged

    def test_cross_coefficient_variants_differ(self, rng):
        _, design, pair = random_satt_instance(rng, n=60, k=2)
        std = kom(design, pair, cross_coefficient="standard")
        printed = kom(design, pair, cross_coefficient="as-printed")
        assert np.abs(std.weights - printed.weights).max() > 1e-6
        with pytest.raises(BalanceKitError):
            kom(design, pair, cross_coefficient="halved")

    def test_explicit_bandwidth(self, rng):
        _, design, pair = random_satt_instance(rng, n=40, k=2)
        sol = kom(design, pair, KernelSpec(bandwidth=2.0))
        assert sol.extras["sigma"] == 2.0


class TestBoss:
    def test_exhaustive_matches_brute_force(self, rng):
        dataset, _, pair = random_satt_instance(rng, n=16, k=2)
        nv = pair.v_indices.size
        bins = default_bins(dataset, pair)
        sol = boss(dataset, pair, bins=bins, mode="exhaustive")
        best = min(
            (boss_objective(dataset, pair, pair.u_indices[list(S)], bins)
             for S in itertools.combinations(range(pair.u_indices.size), nv)),
        )
        assert sol.extras["objective"] == pytest.approx(best)

    def test_weights_are_subset_uniform(self, rng):
        dataset, _, pair = random_satt_instance(rng, n=60, k=2)
        sol = boss(dataset, pair)
        nv = pair.v_indices.size
        nz = sol.weights[sol.weights > 0]
        assert nz.size == nv
        np.testing.assert_allclose(nz, 1.0 / nv)

    def test_local_never_beats_exhaustive(self, rng):
        dataset, _, pair = random_satt_instance(rng, n=14, k=2)
        bins = default_bins(dataset, pair)
        ex = boss(dataset, pair, bins=bins, mode="exhaustive")
        lo = boss(dataset, pair, bins=bins, mode="local")
        assert lo.extras["objective"] >= ex.extras["objective"] - 1e-12

    def test_too_few_candidates(self):
        X = np.arange(5.0)[:, None]
        ds = make_dataset(X, [1, 1, 1, 0, 0])
        pair = build_groups(ds, EstimandSpec("SATT"))[0]
        with pytest.raises(BalanceKitError, match=r"\|U\| < \|V\|"):
            boss(ds, pair)


class TestCbpsExact:
    def test_exact_balance_and_weight_sum(self, rng):
        dataset, design, pair = random_satt_instance(rng, n=200, k=3)
        sol = cbps_exact(design, dataset, pair)
        assert sol.balance_report.max() <= 1e-8
        # the intercept moment pins the odds-weight total to the treated count
        assert sol.extras["weight_sum"] == pytest.approx(pair.v_indices.size, abs=1e-6)

    def test_agrees_with_entropy_balancing_after_normalization(self, rng):
        for _ in range(5):
            dataset, design, pair = random_satt_instance(rng, n=150, k=3)
            w_cbps = normalized(cbps_exact(design, dataset, pair).weights)
            w_ebal = ebal(design, pair).weights
            np.testing.assert_allclose(w_cbps, w_ebal, atol=1e-6)

    def test_intercept_only_closed_form(self):
        # no informative covariate: odds are constant exp(b0) = |V| / |U|
        rng = np.random.default_rng(3)
        X = rng.standard_normal((40, 1))
        z = np.zeros(40, dtype=int)
        z[:10] = 1
        # make the covariate perfectly balanced so beta_1 = 0
        X[10:20, 0] = X[:10, 0]
        X[20:, 0] = np.concatenate([X[:10, 0], X[:10, 0]])
        ds = make_dataset(X, z)
        design = preprocess(ds, PreprocessSpec(standardize=False))
        pair = build_groups(ds, EstimandSpec("SATT"))[0]
        sol = cbps_exact(design, ds, pair)
        np.testing.assert_allclose(sol.weights, 10.0 / 30.0, atol=1e-6)

    def test_moment_jacobian_matches_finite_differences(self, rng):
        dataset, design, pair = random_satt_instance(rng, n=60, k=2)
        Xt = np.column_stack([np.ones(dataset.n), design.matrix])
        Xc = Xt[pair.u_indices]
        target = Xt[pair.v_indices].sum(axis=0)

        def g(beta):
            return Xc.T @ np.exp(Xc @ beta) - target

        def jac(beta):
            return (Xc.T * np.exp(Xc @ beta)) @ Xc

        for _ in range(10):
            beta = rng.normal(scale=0.3, size=Xc.shape[1])
            assert rel_err(jac(beta), central_diff_jac(g, beta)) < 1e-5

    def test_requires_control_side_pair(self, rng):
        dataset, design, _ = random_satt_instance(rng, n=50, k=2)
        pair = build_groups(dataset, EstimandSpec("SATE"))[0]  # treated-side
        with pytest.raises(BalanceKitError, match="control"):
            cbps_exact(design, dataset, pair)


class TestCbsrSate:
    def _instance(self, rng, n=120, k=2):
        dataset, design, _ = random_satt_instance(rng, n=n, k=k)
        return dataset, design

    def test_weights_at_least_one_and_moments_match(self, rng):
        dataset, design = self._instance(rng)
        w, diag = cbsr_sate(design, dataset)
        assert (w >= 1.0).all()
        Phi = np.column_stack([np.ones(dataset.n), design.matrix])
        s = np.where(dataset.treatment == 0, 1.0, -1.0)
        # weighted feature totals agree across the two arms
        assert np.abs(Phi.T @ (s * w)).max() <= 1e-6

    def test_dual_grid_confirms_optimum(self, rng):
        # one covariate -> 2-dimensional dual; the primal objective at the
        # solver's weights beats every point of a dual-feasible grid sweep
        X = rng.standard_normal((40, 1))
        z = (rng.random(40) < 0.5).astype(int)
        z[0], z[1] = 1, 0
        dataset = make_dataset(X, z)
        design = preprocess(dataset)
        w_star, _ = cbsr_sate(design, dataset)
        Phi = np.column_stack([np.ones(40), design.matrix])
        s = np.where(z == 0, 1.0, -1.0)

        def primal(w):
            t = np.maximum(w - 1.0, 1e-300)
            return float(np.sum(t * np.log(t) - w))

        f_star = primal(w_star)
        grid = np.linspace(-2, 2, 81)
        for l0 in grid:
            for l1 in grid:
                w = 1.0 + np.exp(np.clip(-s * (Phi @ [l0, l1]), -50, 50))
                # Lagrangian value at any dual point lower-bounds the optimum
                lagr = primal(w) + np.array([l0, l1]) @ (Phi.T @ (s * w))
                assert f_star >= lagr - 1e-6

    def test_separated_groups_reported_infeasible(self):
        X = np.array([[0.0]] * 5 + [[10.0]] * 5)
        z = np.array([0] * 5 + [1] * 5)
        dataset = make_dataset(X, z)
        design = preprocess(dataset)
        with pytest.raises(InfeasibleProblemError):
            cbsr_sate(design, dataset,
                      opts=SolverOptions(max_iters=60, grad_tol=1e-10))


class TestArb:
    def test_exactly_linear_outcome_recovered(self, rng):
        # with a noiseless linear outcome and no shrinkage, the regression
        # absorbs everything and the estimate equals the true effect
        dataset, design, pair = random_satt_instance(rng, n=80, k=2)
        beta = rng.normal(size=2)
        tau = 1.7
        y = dataset.covariates @ beta + tau * dataset.treatment
        ds = make_dataset(dataset.covariates, dataset.treatment, y)
        design = preprocess(ds, PreprocessSpec(standardize=False))
        estimate, w, alpha, diag = arb_satt(design, ds, lam=0.0,
                                            opts=SolverOptions(max_iters=20000))
        assert estimate == pytest.approx(tau, abs=1e-6)

    def test_null_effect_unbiased(self):
        errs = []
        for seed in range(10):
            rng = np.random.default_rng(seed)
            X = rng.standard_normal((150, 2))
            logits = X @ np.array([0.7, -0.4])
            z = (rng.random(150) < 1 / (1 + np.exp(-logits))).astype(int)
            z[0], z[1] = 1, 0
            y = X @ np.array([1.0, 0.5]) + 0.3 * rng.standard_normal(150)
            ds = make_dataset(X, z, y)
            design = preprocess(ds)
            estimate, *_ = arb_satt(design, ds)
            errs.append(estimate)
        assert abs(np.mean(errs)) <= 0.05

    def test_weights_respect_cap_and_simplex(self, rng):
        dataset, design, _ = random_satt_instance(rng, n=100, k=3, with_outcome=True)
        _, w, _, _ = arb_satt(design, dataset, cap=0.2)
        assert abs(w.sum() - 1.0) <= 1e-7
        assert (w <= 0.2 + 1e-9).all() and (w >= -1e-12).all()

    def test_requires_outcomes(self, rng):
        dataset, design, _ = random_satt_instance(rng, n=50, k=2)
        with pytest.raises(BalanceKitError, match="outcome"):
            arb_satt(design, dataset)

    def test_cap_validation(self, rng):
        dataset, design, _ = random_satt_instance(rng, n=50, k=2, with_outcome=True)
        with pytest.raises(BalanceKitError, match="cap"):
            arb_satt(design, dataset, cap=1e-6)


class TestMipmatchLite:
    def _tiny(self, rng, nu=6, nv=2, k=2):
        X = rng.standard_normal((nu + nv, k))
        z = np.array([0] * nu + [1] * nv)
        ds = make_dataset(X, z)
        design = preprocess(ds, PreprocessSpec(standardize=False))
        pair = build_groups(ds, EstimandSpec("SATT"))[0]
        return ds, design, pair

    def brute_force(self, design, pair, m):
        U, V = pair.u_indices, pair.v_indices
        X = design.matrix
        D = np.linalg.norm(X[U][:, None, :] - X[V][None, :, :], axis=2)
        best, best_cost = None, np.inf
        for combo in itertools.permutations(range(U.size), m * V.size):
            assign = tuple(tuple(sorted(combo[j * m:(j + 1) * m]))
                           for j in range(V.size))
            if any(tuple(combo[j * m:(j + 1) * m]) != assign[j] for j in range(V.size)):
                continue
            cost = sum(D[list(ii), j].sum() for j, ii in enumerate(assign))
            if cost < best_cost - 1e-12:
                best, best_cost = assign, cost
        return best_cost

    def test_exhaustive_matches_independent_enumeration(self, rng):
        for m in (1, 2):
            ds, design, pair = self._tiny(rng, nu=6, nv=2)
            sol = mipmatch_lite(design, pair, m=m, mode="exhaustive")
            want = self.brute_force(design, pair, m)
            assert sol.diagnostics.objective == pytest.approx(want)

    def test_local_respects_no_replacement(self, rng):
        ds, design, pair = self._tiny(rng, nu=10, nv=3)
        sol = mipmatch_lite(design, pair, m=2, mode="local")
        matched = [i for ii in sol.extras["matches"].values() for i in ii]
        assert len(matched) == len(set(matched)) == 6
        assert sol.weights.sum() == pytest.approx(6.0)

    def test_local_never_beats_exhaustive(self, rng):
        for _ in range(5):
            ds, design, pair = self._tiny(rng, nu=7, nv=2)
            ex = mipmatch_lite(design, pair, m=1, mode="exhaustive")
            lo = mipmatch_lite(design, pair, m=1, mode="local")
            assert lo.diagnostics.objective >= ex.diagnostics.objective - 1e-9

    def test_insufficient_donors(self, rng):
        ds, design, pair = self._tiny(rng, nu=3, nv=2)
        with pytest.raises(InfeasibleProblemError, match="donors"):
            mipmatch_lite(design, pair, m=2)

    def test_hard_balance_constraint_violation_reported(self, rng):
        X = np.array([[0.0], [0.1], [5.0], [5.1], [10.0], [10.1]])
        z = np.array([0, 0, 0, 0, 1, 1])
        ds = make_dataset(X, z)
        design = preprocess(ds, PreprocessSpec(standardize=False))
        pair = build_groups(ds, EstimandSpec("SATT"))[0]
        with pytest.raises(InfeasibleProblemError):
            mipmatch_lite(design, pair, m=1, epsilons=0.01)

    def test_balance_penalty_changes_selection(self, rng):
        # without the penalty, nearest donors win; a large penalty on the
        # mean gap can prefer donors that bracket the treated group
        X = np.array([[2.4], [2.6], [1.2], [2.0]])
        z = np.array([0, 0, 0, 1])
        ds = make_dataset(X, z)
        design = preprocess(ds, PreprocessSpec(standardize=False))
        pair = build_groups(ds, EstimandSpec("SATT"))[0]
        plain = mipmatch_lite(design, pair, m=2, mode="exhaustive")
        heavy = mipmatch_lite(design, pair, m=2, mode="exhaustive", omega=100.0)
        assert plain.extras["matches"] != heavy.extras["matches"]


class TestIpwWeights:
    def test_hand_values(self):
        ds = make_dataset(np.zeros((4, 1)), [1, 1, 0, 0])
        pihat = np.array([0.5, 0.8, 0.5, 0.2])
        sate = ipw_weights(ds, EstimandSpec("SATE"), pihat)
        np.testing.assert_allclose(sate, [2.0, 1.25, -2.0, -1.25])
        satt = ipw_weights(ds, EstimandSpec("SATT"), pihat)
        np.testing.assert_allclose(satt, [1.0, 1.0, -1.0, -0.25])

    def test_degenerate_propensities_rejected(self):
        ds = make_dataset(np.zeros((2, 1)), [1, 0])
        with pytest.raises(BalanceKitError):
            ipw_weights(ds, EstimandSpec("SATE"), np.array([1.0, 0.5]))

    def test_string_estimand_accepted(self):
        ds = make_dataset(np.zeros((2, 1)), [1, 0])
        w = ipw_weights(ds, "SATT", np.array([0.5, 0.5]))
        np.testing.assert_allclose(w, [1.0, -1.0])
        with pytest.raises(BalanceKitError):
            ipw_weights(ds, "CATE", np.array([0.5, 0.5]))


class TestWeightSolution:
    def test_json_round_trip(self, rng):
        _, design, pair = random_satt_instance(rng, n=30, k=2)
        sol = ebal(design, pair)
        payload = json.loads(sol.to_json(ids=[f"id{i}" for i in pair.u_indices]))
        assert payload["method"] == "ebal"
        assert len(payload["weights"]) == pair.u_indices.size
        assert payload["diagnostics"]["converged"] is True

    def test_nonfinite_weights_rejected(self, rng):
        _, design, pair = random_satt_instance(rng, n=30, k=2)
        sol = ebal(design, pair)
        bad = sol.weights.copy()
        bad[0] = np.inf
        with pytest.raises(BalanceKitError):
            WeightSolution(bad, "x", sol.diagnostics, sol.balance_report)
