"""The balancing-method catalog.

Every method takes a design matrix plus a (U, V) group pair and returns
a WeightSolution: weights over U, solver diagnostics and a post-weighting
balance report. Methods that are infeasible on a given dataset raise
InfeasibleProblemError; callers treat that as a reported outcome, not a
crash.
"""

from __future__ import annotations

import itertools
import json
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import Dataset, DesignMatrix, GroupPair
from .exceptions import BalanceKitError, InfeasibleProblemError
from .metrics import (BinningSpec, KernelSpec, boss_objective, default_bins,
                      kernel_matrix, mean_imbalance, mmd_squared,
                      resolve_bandwidth)
from .solvers import (SolveDiagnostics, SolverOptions, elastic_net,
                      entropy_dual_newton, logistic_fit, moment_newton,
                      projected_descent, qp_over_set, subset_search)
from .weight_sets import WeightSet, contains, project_simplex

METHOD_IDS = ("ebal", "sbw", "kom", "boss", "cbps_exact", "cbsr_sate",
              "arb_satt", "mipmatch_lite", "ipw")


@dataclass(frozen=True)
class FeatureSpec:
    """Which functions of the covariates enter the balance constraints.

    basis: "raw" | "raw+squares" | "raw+squares+interactions" |
    "kernel" (kernel columns anchored at every subject). Targets are
    always V means, so no intercept feature is generated here.
    """

    basis: str = "raw"
    kernel: Optional[KernelSpec] = None

    def __post_init__(self):
        if self.basis not in ("raw", "raw+squares", "raw+squares+interactions", "kernel"):
            raise BalanceKitError(f"unknown feature basis {self.basis!r}")
        if (self.basis == "kernel") != (self.kernel is not None):
            raise BalanceKitError("kernel spec required exactly for the kernel basis")


def build_features(design: DesignMatrix, spec: FeatureSpec = FeatureSpec()):
    """Feature matrix (n x K) and names from a design matrix."""
    keep = [j for j, n in enumerate(design.names) if n != "(intercept)"]
    X = design.matrix[:, keep]
    names = [design.names[j] for j in keep]
    if spec.basis == "kernel":
        sigma = resolve_bandwidth(X, spec.kernel)
        M = kernel_matrix(X, X, spec.kernel, sigma=sigma)
        return M, [f"k(.,{i})" for i in range(X.shape[0])]
    cols = [X]
    out_names = list(names)
    if spec.basis in ("raw+squares", "raw+squares+interactions"):
        cols.append(X**2)
        out_names += [f"{n}^2" for n in names]
    if spec.basis == "raw+squares+interactions":
        for a, b in itertools.combinations(range(X.shape[1]), 2):
            cols.append((X[:, a] * X[:, b])[:, None])
            out_names.append(f"{names[a]}*{names[b]}")
    return np.column_stack(cols), out_names


@dataclass
class WeightSolution:
    weights: np.ndarray
    method: str
    diagnostics: SolveDiagnostics
    balance_report: np.ndarray
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.isfinite(self.weights).all():
            raise BalanceKitError("weights must be finite")

    def to_json(self, ids=None) -> str:
        if ids is None:
            ids = [str(i) for i in range(self.weights.size)]
        return json.dumps({
            "method": self.method,
            "weights": {str(i): float(v) for i, v in zip(ids, self.weights)},
            "diagnostics": self.diagnostics.to_dict(),
            "balance_report": [float(v) for v in self.balance_report],
        })


def _feature_system(design, pair, features):
    Phi, names = build_features(design, features)
    A = Phi[pair.u_indices].T  # K x |U|
    b = Phi[pair.v_indices].mean(axis=0)
    return Phi, A, b, names


def _report(Phi, pair, w):
    s = w.sum()
    wn = w / s if s > 0 else w
    return np.abs(Phi[pair.u_indices].T @ wn - Phi[pair.v_indices].mean(axis=0))


def ebal(design: DesignMatrix, pair: GroupPair, features: FeatureSpec = FeatureSpec(),
         base_weights=None, opts: SolverOptions = SolverOptions()) -> WeightSolution:
    """Entropy balancing: max-entropy simplex weights with exact balance.

    Minimizes KL(w || q) subject to the feature means of U matching the
    V means exactly; q defaults to uniform.
    """
    Phi, A, b, _ = _feature_system(design, pair, features)
    m = pair.u_indices.size
    q = np.full(m, 1.0 / m) if base_weights is None else np.asarray(base_weights, float)
    tol = max(opts.grad_tol, 1e-10)
    w, lam, diag = entropy_dual_newton(A, b, q, opts=SolverOptions(
        max_iters=opts.max_iters, grad_tol=min(tol, 1e-9), seed=opts.seed))
    return WeightSolution(w, "ebal", diag, _report(Phi, pair, w), extras={"duals": lam})


def sbw(design: DesignMatrix, pair: GroupPair, features: FeatureSpec = FeatureSpec(),
        deltas=0.02, opts: SolverOptions = SolverOptions()) -> WeightSolution:
    """Stable balancing weights: minimum-variance simplex weights under
    per-feature mean-balance slacks.

    On the simplex the weight variance equals ||w||^2 - 1/|U| up to a
    constant, so the problem is min ||w||^2 subject to |A'w - b| <= delta.
    Solved by an augmented-Lagrangian penalized sequence on the squared
    hinge of the slack constraints; achieved slacks are reported.
    """
    Phi, A, b, names = _feature_system(design, pair, features)
    K, m = A.shape
    deltas = np.broadcast_to(np.asarray(deltas, dtype=float), (K,)).copy()
    if (deltas < 0).any():
        raise BalanceKitError("deltas must be nonnegative")
    t0 = time.perf_counter()
    At = A.T  # m x K
    rho = 10.0
    mu_hi = np.zeros(K)  # multipliers for  r <= delta
    mu_lo = np.zeros(K)  # multipliers for -r <= delta
    w = np.full(m, 1.0 / m)
    lam_max = float(np.linalg.eigvalsh(A @ At).max())
    total_it = 0
    violation = np.inf
    for outer in range(60):
        def fun(x, rho=rho, mh=mu_hi, ml=mu_lo):
            r = A @ x - b
            hi = np.maximum(0.0, mh + rho * (r - deltas))
            lo = np.maximum(0.0, ml + rho * (-r - deltas))
            return float(x @ x + (hi @ hi - mh @ mh + lo @ lo - ml @ ml) / (2 * rho))

        def grad(x, rho=rho, mh=mu_hi, ml=mu_lo):
            r = A @ x - b
            hi = np.maximum(0.0, mh + rho * (r - deltas))
            lo = np.maximum(0.0, ml + rho * (-r - deltas))
            return 2.0 * x + At @ (hi - lo)

        w, _, _, it = projected_descent(
            fun, grad, project_simplex, w,
            SolverOptions(max_iters=4000, grad_tol=1e-12, seed=opts.seed),
            lipschitz=2.0 + rho * lam_max,
        )
        total_it += it
        r = A @ w - b
        prev = violation
        violation = float(np.maximum(np.abs(r) - deltas, 0.0).max(initial=0.0))
        if violation <= 1e-8:
            break
        mu_hi = np.maximum(0.0, mu_hi + rho * (r - deltas))
        mu_lo = np.maximum(0.0, mu_lo + rho * (-r - deltas))
        if violation > 0.5 * prev:
            rho = min(rho * 10.0, 1e12)
    else:
        pass
    r = A @ w - b
    violation = float(np.maximum(np.abs(r) - deltas, 0.0).max(initial=0.0))
    if violation > 1e-8:
        worst = int(np.maximum(np.abs(r) - deltas, 0.0).argmax())
        raise InfeasibleProblemError(
            f"sbw constraints infeasible: feature {names[worst]!r} misses its "
            f"tolerance by {violation:.3g}",
            worst_feature=names[worst],
            residual=violation,
        )
    diag = SolveDiagnostics(
        objective=float(w @ w - 1.0 / m),
        residual_inf_norm=violation,
        iterations=total_it,
        converged=True,
        wall_time=time.perf_counter() - t0,
    )
    return WeightSolution(w, "sbw", diag, _report(Phi, pair, w),
                          extras={"achieved_slacks": np.abs(r), "deltas": deltas})


def kom(design: DesignMatrix, pair: GroupPair, kernel: KernelSpec = KernelSpec(),
        wset: Optional[WeightSet] = None, cross_coefficient: str = "standard",
        opts: SolverOptions = SolverOptions()) -> WeightSolution:
    """Kernel optimal matching: minimize the RKHS discrepancy to V.

    `standard` uses the 2/|V| cross-term coefficient whose minimizer is
    the squared-MMD minimizer; `as-printed` keeps the extra |U| factor of
    the source formulation. Both are exposed because they give different
    argmins.
    """
    if cross_coefficient not in ("standard", "as-printed"):
        raise BalanceKitError(f"unknown cross_coefficient {cross_coefficient!r}")
    nu, nv = pair.u_indices.size, pair.v_indices.size
    if wset is None:
        wset = WeightSet("simplex", dim=nu)
    X = design.matrix
    Xu, Xv = X[pair.u_indices], X[pair.v_indices]
    sigma = resolve_bandwidth(np.vstack([Xu, Xv]), kernel)
    Kuu = kernel_matrix(Xu, Xu, kernel, sigma=sigma)
    Kuv = kernel_matrix(Xu, Xv, kernel, sigma=sigma)
    coef = (2.0 / nv) if cross_coefficient == "standard" else (2.0 * nu / nv)
    Q = 2.0 * Kuu
    c = -coef * Kuv.sum(axis=1)
    qopts = SolverOptions(max_iters=max(opts.max_iters, 2000),
                          grad_tol=max(opts.grad_tol, 1e-10),
                          step_rule=opts.step_rule, seed=opts.seed)
    w, diag = qp_over_set(Q, c, wset, opts=qopts)
    achieved = mmd_squared(X, pair, w, kernel, sigma=sigma) if wset.kind != "general" else None
    return WeightSolution(w, "kom", diag, mean_imbalance(design, pair, w),
                          extras={"mmd_squared": achieved, "sigma": sigma})


def boss(dataset: Dataset, pair: GroupPair, bins: Optional[BinningSpec] = None,
         mode: str = "local", opts: SolverOptions = SolverOptions()) -> WeightSolution:
    """Balance optimization subset selection: pick |V| subjects out of U so
    per-bin counts match V, weighting each selected subject 1/|V|."""
    nu, nv = pair.u_indices.size, pair.v_indices.size
    if nu < nv:
        raise BalanceKitError(
            "|U| < |V|: subset selection needs at least |V| candidates "
            "(a multisubset variant would be required; not implemented)"
        )
    if bins is None:
        bins = default_bins(dataset, pair)
    t0 = time.perf_counter()

    def obj(local_subset):
        return boss_objective(dataset, pair, pair.u_indices[list(local_subset)], bins)

    subset, val = subset_search(obj, nu, nv, mode=mode, opts=opts)
    w = np.zeros(nu)
    w[list(subset)] = 1.0 / nv
    diag = SolveDiagnostics(objective=val, residual_inf_norm=val, iterations=1,
                            converged=True, wall_time=time.perf_counter() - t0)
    design_like = DesignMatrix(dataset.covariates,
                               [c.name for c in dataset.columns],
                               [c.name for c in dataset.columns])
    return WeightSolution(w, "boss", diag, mean_imbalance(design_like, pair, w),
                          extras={"selected": np.asarray(subset, dtype=int),
                                  "objective": val})


def cbps_exact(design: DesignMatrix, dataset: Dataset, pair: GroupPair,
               opts: SolverOptions = SolverOptions()) -> WeightSolution:
    """Exact (just-identified) CBPS for the SATT.

    Fits a logistic propensity whose control odds weights reproduce the
    treated feature totals exactly: the K = p+1 moment conditions (with
    intercept) are solved by damped Newton from the logistic MLE start.
    Returns unnormalized odds weights over the controls.
    """
    if pair.role != "control-side":
        raise BalanceKitError("cbps_exact balances controls toward the treated (SATT)")
    keep = [j for j, n in enumerate(design.names) if n != "(intercept)"]
    X = design.matrix[:, keep]
    Xt = np.column_stack([np.ones(dataset.n), X])  # intercept + design columns
    z = dataset.treatment
    ctrl, trt = pair.u_indices, pair.v_indices
    Xc = Xt[ctrl]
    target = Xt[trt].sum(axis=0)
    scale = float(trt.size)  # per-treated-unit moments keep tolerances size-free

    def odds(beta):
        return np.exp(np.clip(Xc @ beta, -500, 500))

    def g(beta):
        return (Xc.T @ odds(beta) - target) / scale

    def jac(beta):
        return (Xc.T * odds(beta)) @ Xc / scale

    beta0, _ = logistic_fit(Xt, z, opts=SolverOptions(max_iters=200, grad_tol=1e-8))
    beta, diag = moment_newton(g, jac, beta0, opts=SolverOptions(
        max_iters=opts.max_iters, grad_tol=max(opts.grad_tol, 1e-9), seed=opts.seed))
    w = odds(beta)
    Phi = Xt[:, 1:]
    report = np.abs(Phi[ctrl].T @ (w / w.sum()) - Phi[trt].mean(axis=0))
    return WeightSolution(w, "cbps_exact", diag, report,
                          extras={"beta": beta, "weight_sum": float(w.sum())})


def cbsr_sate(design: DesignMatrix, dataset: Dataset,
              opts: SolverOptions = SolverOptions()):
    """One-shot SATE weights: min sum (w_i - 1) log(w_i - 1) - w_i over
    w >= 1 subject to equal weighted feature totals across groups.

    Strictly convex, solved in the dual: w_i = 1 + exp(-s_i lam.phi_i)
    with s_i = +1 for controls and -1 for treated; the dual root system
    is handed to the damped Newton solver.
    """
    keep = [j for j, n in enumerate(design.names) if n != "(intercept)"]
    Phi = np.column_stack([np.ones(dataset.n), design.matrix[:, keep]])
    s = np.where(dataset.treatment == 0, 1.0, -1.0)

    def w_of(lam):
        return 1.0 + np.exp(np.clip(-s * (Phi @ lam), -500, 500))

    def g(lam):
        return Phi.T @ (s * w_of(lam))

    def jac(lam):
        e = np.exp(np.clip(-s * (Phi @ lam), -500, 500))
        return -(Phi.T * e) @ Phi

    try:
        lam, diag = moment_newton(g, jac, np.zeros(Phi.shape[1]), opts=SolverOptions(
            max_iters=opts.max_iters, grad_tol=max(opts.grad_tol, 1e-8), seed=opts.seed))
    except Exception as exc:
        raise InfeasibleProblemError(f"cbsr_sate dual did not converge: {exc}")
    w = w_of(lam)
    return w, diag


def arb_satt(design: DesignMatrix, dataset: Dataset, eta: float = 0.5,
             cap: float = 1.0, lam: Optional[float] = None, gamma: float = 0.5,
             printed_scaling: bool = False,
             opts: SolverOptions = SolverOptions()):
    """Approximate residual balancing for the SATT (mixed method).

    Step 1 trades mean imbalance against weight dispersion over the
    b-simplex; step 2 fits an elastic net of the outcome on the control
    covariates (lambda by 5-fold CV on a 20-point log grid when not
    given); step 3 combines the regression prediction for the treated
    with the weighted control residuals.

    By default the imbalance term is sum_i w_i X_i - mean(X_treated);
    ``printed_scaling`` restores the extra 1/|controls| factor of the
    source formulation.
    """
    if not dataset.has_outcome:
        raise BalanceKitError("arb_satt needs outcomes (mixed method)")
    ctrl = dataset.control_indices()
    trt = dataset.treated_indices()
    if not (1.0 / ctrl.size <= cap <= 1.0):
        raise BalanceKitError("cap must lie in [1/|controls|, 1]")
    keep = [j for j, n in enumerate(design.names) if n != "(intercept)"]
    X = design.matrix[:, keep]
    Xc, Xtr = X[ctrl], X[trt]
    A = Xc / ctrl.size if printed_scaling else Xc
    mbar = Xtr.mean(axis=0)
    Q = 2.0 * (eta * (A @ A.T) + (1.0 - eta) * np.eye(ctrl.size))
    c = -2.0 * eta * (A @ mbar)
    w, diag = qp_over_set(Q, c, WeightSet("b-simplex", dim=ctrl.size, b=cap),
                          opts=SolverOptions(max_iters=max(opts.max_iters, 2000),
                                             grad_tol=1e-9, seed=opts.seed))
    y = dataset.outcome
    yc = y[ctrl]
    if lam is None:
        lam = _cv_lambda(Xc, yc, gamma, seed=opts.seed)
    alpha = elastic_net(Xc, yc, lam, gamma, opts=opts)
    estimate = float(y[trt].mean() - (mbar @ alpha + w @ (yc - Xc @ alpha)))
    return estimate, w, alpha, diag


def _cv_lambda(X, y, gamma, seed=0, n_folds=5, n_grid=20):
    """5-fold CV over a 20-point logarithmic lambda grid."""
    n = X.shape[0]
    lam_max = max(2.0 * float(np.abs(X.T @ (y - y.mean())).max()), 1e-8)
    grid = np.geomspace(lam_max * 1e-4, lam_max, n_grid)
    folds = np.arange(n) % n_folds  # deterministic striding
    best_lam, best_err = grid[0], np.inf
    for lam in grid:
        err = 0.0
        for f in range(n_folds):
            tr, te = folds != f, folds == f
            if te.sum() == 0 or tr.sum() < 2:
                continue
            a = elastic_net(X[tr], y[tr], lam, gamma)
            r = y[te] - X[te] @ a
            err += float(r @ r)
        if err < best_err:
            best_lam, best_err = lam, err
    return float(best_lam)


def mipmatch_lite(design: DesignMatrix, pair: GroupPair, m: int = 1,
                  omega=None, epsilons=None, mode: str = "local",
                  opts: SolverOptions = SolverOptions()) -> WeightSolution:
    """Heuristic 1:m matching without replacement with optional balance
    penalties (omega, per design column) and hard balance tolerances
    (epsilons, per design column).

    Local mode: greedy nearest-feasible construction plus best-improvement
    reassignments/swaps. Exhaustive mode enumerates all assignments for
    m*|V| <= 10 and |U| <= 10. Distances are Euclidean on the design rows.
    """
    U, V = pair.u_indices, pair.v_indices
    nu, nv = U.size, V.size
    if nu < m * nv:
        raise InfeasibleProblemError(f"matching infeasible: need {m * nv} donors, have {nu}")
    X = design.matrix
    D = np.linalg.norm(X[U][:, None, :] - X[V][None, :, :], axis=2)  # nu x nv
    k = X.shape[1]
    omega_vec = np.zeros(k) if omega is None else np.broadcast_to(np.asarray(omega, float), (k,))
    eps_vec = np.full(k, np.inf) if epsilons is None else np.broadcast_to(np.asarray(epsilons, float), (k,))
    v_means = X[V].mean(axis=0)
    BIG = 1e9

    def imbalance(matched_local):
        # mean over the m*|V| matched U subjects vs the V means
        sel = X[U[matched_local]]
        return np.abs(sel.mean(axis=0) - v_means)

    def cost(assign):
        # assign: tuple of tuples, assign[j] = local U indices matched to V j
        total = 0.0
        flat = []
        for j, ii in enumerate(assign):
            flat.extend(ii)
            total += D[list(ii), j].sum()
        imb = imbalance(np.array(flat, dtype=int))
        total += float(omega_vec @ imb)
        viol = np.maximum(imb - eps_vec, 0.0)
        total += BIG * float(viol[np.isfinite(eps_vec)].sum()) if np.isfinite(eps_vec).any() else 0.0
        return total

    t0 = time.perf_counter()
    if mode == "exhaustive":
        if m * nv > 10 or nu > 10:
            raise BalanceKitError("exhaustive matching budget exceeded")
        best, best_cost = None, np.inf
        for combo in itertools.permutations(range(nu), m * nv):
            assign = tuple(tuple(sorted(combo[j * m:(j + 1) * m])) for j in range(nv))
            # canonical form avoids counting permutations within a match group
            if any(combo[j * m:(j + 1) * m] != assign[j] for j in range(nv)):
                continue
            val = cost(assign)
            if val < best_cost - 1e-12:
                best, best_cost = assign, val
        assign, total = best, best_cost
    elif mode == "local":
        available = set(range(nu))
        assign_l = []
        for j in range(nv):
            order = np.argsort(D[:, j], kind="stable")
            picked = [i for i in order if i in available][:m]
            for i in picked:
                available.discard(i)
            assign_l.append(tuple(sorted(picked)))
        assign = tuple(assign_l)
        total = cost(assign)
        improved = True
        while improved:
            improved = False
            used = {i for ii in assign for i in ii}
            free = [i for i in range(nu) if i not in used]
            best_move, best_val = None, total
            for j in range(nv):
                for pos, i in enumerate(assign[j]):
                    for o in free:
                        cand = list(map(list, assign))
                        cand[j][pos] = o
                        cand[j] = sorted(cand[j])
                        cand_t = tuple(tuple(x) for x in cand)
                        val = cost(cand_t)
                        if val < best_val - 1e-12:
                            best_move, best_val = cand_t, val
            if best_move is not None:
                assign, total = best_move, best_val
                improved = True
    else:
        raise BalanceKitError(f"unknown matching mode {mode!r}")

    flat = np.array(sorted({i for ii in assign for i in ii}), dtype=int)
    final_imb = imbalance(flat)
    if (final_imb > eps_vec + 1e-12).any():
        worst = int(np.argmax(final_imb - eps_vec))
        raise InfeasibleProblemError(
            f"matching balance constraint violated on column {design.names[worst]!r}",
            worst_feature=design.names[worst],
            residual=float(final_imb[worst] - eps_vec[worst]),
        )
    w = np.zeros(nu)
    w[flat] = 1.0
    diag = SolveDiagnostics(objective=float(total), residual_inf_norm=0.0,
                            iterations=1, converged=True,
                            wall_time=time.perf_counter() - t0)
    matches = {int(V[j]): tuple(int(U[i]) for i in assign[j]) for j in range(nv)}
    return WeightSolution(w, "mipmatch_lite", diag,
                          mean_imbalance(design, pair, w),
                          extras={"matches": matches})


def ipw_weights(dataset: Dataset, estimand, pihat) -> np.ndarray:
    """Inverse-probability weights over all subjects, exactly as printed.

    SATE: Z/pi - (1-Z)/(1-pi) (signed). SATT: Z - (1-Z) pi/(1-pi), i.e.
    treated keep weight 1 and controls carry negative odds.
    """
    pihat = np.asarray(pihat, dtype=float)
    if ((pihat <= 0) | (pihat >= 1)).any():
        raise BalanceKitError("fitted propensities must lie strictly in (0, 1)")
    z = dataset.treatment
    kind = estimand.kind if hasattr(estimand, "kind") else str(estimand)
    if kind == "SATE":
        return z / pihat - (1 - z) / (1 - pihat)
    if kind == "SATT":
        return z - (1 - z) * pihat / (1 - pihat)
    raise BalanceKitError(f"ipw weights defined for SATE/SATT, not {kind!r}")


def normalized(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    return w / w.sum()
