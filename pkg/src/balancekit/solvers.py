"""Self-contained optimization engines.

Everything here is deterministic for fixed inputs and seed: dual Newton
for entropy objectives, projected gradient (with a Frank-Wolfe fallback)
for quadratic programs over convex weight sets, damped Newton for moment
systems, cyclic coordinate descent for the elastic net, ridge-stabilized
Newton-Raphson logistic regression, and greedy/swap local search plus an
exhaustive enumerator for fixed-cardinality subset problems.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass

import numpy as np

from .exceptions import BalanceKitError, ConvergenceError, InfeasibleProblemError
from .weight_sets import WeightSet, project

SUFFICIENT_DECREASE = 1e-4
DUAL_DIVERGENCE_NORM = 1e6


@dataclass(frozen=True)
class SolverOptions:
    max_iters: int = 500
    grad_tol: float = 1e-9
    step_rule: str = "backtracking"  # "fixed" | "backtracking" | "frank-wolfe"
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise BalanceKitError("max_iters must be >= 1")
        if self.grad_tol <= 0:
            raise BalanceKitError("grad_tol must be positive")


@dataclass
class SolveDiagnostics:
    objective: float
    residual_inf_norm: float
    iterations: int
    converged: bool
    wall_time: float

    def to_dict(self):
        return {
            "objective": self.objective,
            "residual_inf_norm": self.residual_inf_norm,
            "iterations": self.iterations,
            "converged": self.converged,
            "wall_time": self.wall_time,
        }


def _entropy_weights(A, q, lam):
    """w_i ∝ q_i exp(lam . A_col_i), normalized; stable via max-shift."""
    s = lam @ A
    s = s - s.max()
    w = q * np.exp(s)
    return w / w.sum()


def entropy_dual_newton(A, b, q, opts: SolverOptions = SolverOptions()):
    """KL projection of base weights q onto {w >= 0, sum w = 1, A w = b}.

    Works in the smooth unconstrained dual D(lam) = logsumexp(q e^{lam.A})
    - lam.b, solved by Newton with backtracking from lam = 0 (w = q).
    Divergence of the dual (|lam| blowing up or a stalled line search)
    signals infeasible constraints.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    q = np.asarray(q, dtype=float)
    K, m = A.shape
    if (q <= 0).any() or abs(q.sum() - 1.0) > 1e-8:
        raise BalanceKitError("base weights must be strictly positive and sum to 1")
    if not np.isfinite(b).all():
        raise BalanceKitError("targets must be finite")
    if np.linalg.matrix_rank(A, tol=1e-10 * max(1.0, np.abs(A).max())) < K:
        raise BalanceKitError(
            "constraint matrix is rank deficient; drop collinear features "
            "(preprocess with a collinearity tolerance) and retry"
        )

    logq = np.log(q)

    def dual(lam):
        s = logq + lam @ A
        smax = s.max()
        return smax + math.log(np.exp(s - smax).sum()) - lam @ b

    t0 = time.perf_counter()
    lam = np.zeros(K)
    fval = dual(lam)
    it = 0
    residual = np.inf
    for it in range(1, opts.max_iters + 1):
        w = _entropy_weights(A, q, lam)
        grad = A @ w - b
        residual = float(np.abs(grad).max())
        if residual <= opts.grad_tol:
            break
        Aw = A @ w
        H = (A * w) @ A.T - np.outer(Aw, Aw)
        try:
            step = np.linalg.solve(H + 1e-12 * np.eye(K), -grad)
        except np.linalg.LinAlgError:
            step = -grad
        t = 1.0
        decreased = False
        g_dot_s = grad @ step
        if g_dot_s >= 0:  # not a descent direction: fall back to gradient
            step = -grad
            g_dot_s = -(grad @ grad)
        if abs(g_dot_s) < 1e-12 * max(1.0, abs(fval)):
            # The predicted dual decrease is below the float resolution of
            # dual-value comparisons, so Armijo can only accept no-op steps.
            # Switch to the Newton local phase: accept the full step on
            # gradient-norm decrease.
            cand = lam + step
            gc = A @ _entropy_weights(A, q, cand) - b
            if float(np.abs(gc).max()) < 0.9 * residual:
                lam, fval = cand, dual(cand)
                decreased = True
        else:
            for _ in range(60):
                cand = lam + t * step
                fc = dual(cand)
                if fc <= fval + SUFFICIENT_DECREASE * t * g_dot_s:
                    lam, fval = cand, fc
                    decreased = True
                    break
                t *= 0.5
        if not decreased or np.linalg.norm(lam) > DUAL_DIVERGENCE_NORM:
            worst = int(np.abs(grad).argmax())
            raise InfeasibleProblemError(
                "entropy balancing constraints appear infeasible "
                f"(dual diverged; worst residual {residual:.3g} on feature {worst})",
                worst_feature=worst,
                residual=residual,
            )
    w = _entropy_weights(A, q, lam)
    residual = float(np.abs(A @ w - b).max())
    if residual > opts.grad_tol:
        worst = int(np.abs(A @ w - b).argmax())
        raise InfeasibleProblemError(
            "entropy balancing did not reach the constraints within the "
            f"iteration budget (worst residual {residual:.3g} on feature {worst})",
            worst_feature=worst,
            residual=residual,
        )
    diag = SolveDiagnostics(
        objective=float(np.sum(w * np.log(w / q))),
        residual_inf_norm=residual,
        iterations=it,
        converged=True,
        wall_time=time.perf_counter() - t0,
    )
    return w, lam, diag


def projected_descent(fun, grad, project_fn, x0, opts: SolverOptions, lipschitz=None):
    """Projected gradient with backtracking on a smooth convex objective.

    Convergence is declared on the fixed-point residual
    ||x - P(x - grad(x))||_inf <= grad_tol.
    """
    x = project_fn(np.asarray(x0, dtype=float))
    fx = fun(x)
    t = 1.0 / lipschitz if lipschitz else 1.0
    it = 0
    residual = np.inf
    for it in range(1, opts.max_iters + 1):
        g = grad(x)
        residual = float(np.abs(x - project_fn(x - g)).max())
        if residual <= opts.grad_tol:
            break
        step = t
        moved = False
        for _ in range(60):
            cand = project_fn(x - step * g)
            d = cand - x
            fc = fun(cand)
            if fc <= fx + g @ d + 0.5 / step * (d @ d) + 1e-15:
                if fc <= fx:
                    x, fx = cand, fc
                    moved = True
                break
            step *= 0.5
        if not moved:
            # Stuck at machine precision; report the residual we have.
            break
    return x, fx, residual, it


def _polish_qp_simplex(Q, c, w0, b_cap, max_rounds=60, tol=1e-12):
    """Active-set refinement for min 0.5 w'Qw + c'w over the (capped) simplex.

    Seeds the active set from ``w0``, then alternates between solving the
    equality-constrained KKT system on the free coordinates and exchanging
    coordinates whose bound or multiplier sign is violated.  Returns the
    polished point, or None if the active-set loop fails to settle.
    """
    m = w0.size
    at_zero = w0 <= tol * 10
    at_cap = (w0 >= b_cap - tol * 10) if np.isfinite(b_cap) else np.zeros(m, bool)
    for _ in range(max_rounds):
        free = ~(at_zero | at_cap)
        if not free.any():
            return None
        idx = np.flatnonzero(free)
        budget = 1.0 - b_cap * int(at_cap.sum()) if np.isfinite(b_cap) else 1.0
        k = idx.size
        kkt = np.zeros((k + 1, k + 1))
        kkt[:k, :k] = Q[np.ix_(idx, idx)]
        kkt[:k, k] = 1.0
        kkt[k, :k] = 1.0
        rhs = np.zeros(k + 1)
        rhs[:k] = -c[idx]
        if np.isfinite(b_cap) and at_cap.any():
            rhs[:k] -= Q[np.ix_(idx, np.flatnonzero(at_cap))].sum(axis=1) * b_cap
        rhs[k] = budget
        sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
        w = np.zeros(m)
        w[idx] = sol[:k]
        if np.isfinite(b_cap):
            w[at_cap] = b_cap
        nu = sol[k]
        # Clamp any free coordinate that left its bounds.
        bad_lo = idx[w[idx] < -tol]
        bad_hi = idx[w[idx] > b_cap + tol] if np.isfinite(b_cap) else np.array([], int)
        if bad_lo.size or bad_hi.size:
            at_zero[bad_lo] = True
            at_cap[bad_hi] = True
            continue
        w = np.clip(w, 0.0, b_cap if np.isfinite(b_cap) else None)
        # KKT multiplier check: release the worst-violating bound, if any.
        g = Q @ w + c
        rel_zero = np.flatnonzero(at_zero & (g + nu < -1e-11))
        rel_cap = np.flatnonzero(at_cap & (g + nu > 1e-11))
        if rel_zero.size == 0 and rel_cap.size == 0:
            return w
        if rel_zero.size:
            worst = rel_zero[np.argmin(g[rel_zero] + nu)]
            at_zero[worst] = False
        if rel_cap.size:
            worst = rel_cap[np.argmax(g[rel_cap] + nu)]
            at_cap[worst] = False
    return None


def _frank_wolfe_simplex(Q, c, x0, opts: SolverOptions):
    """Frank-Wolfe over the simplex with exact line search (PSD Q)."""
    x = x0.copy()
    it = 0
    residual = np.inf
    for it in range(1, opts.max_iters + 1):
        g = Q @ x + c
        j = int(np.argmin(g))
        d = -x
        d[j] += 1.0
        gap = -(g @ d)
        residual = float(gap)
        if gap <= opts.grad_tol:
            break
        dQd = d @ Q @ d
        t = 1.0 if dQd <= 0 else min(1.0, gap / dQd)
        x = x + t * d
    fx = 0.5 * x @ Q @ x + c @ x
    return x, fx, residual, it


def qp_over_set(Q, c, wset: WeightSet, opts: SolverOptions = SolverOptions()):
    """Minimize 0.5 w'Qw + c'w over a convex weight set.

    General set: direct PSD solve (least squares handles degeneracy).
    Simplex / b-simplex: projected gradient with the Lipschitz step; a
    "frank-wolfe" step rule is available for PSD-degenerate Q.
    """
    Q = np.asarray(Q, dtype=float)
    c = np.asarray(c, dtype=float)
    m = Q.shape[0]
    if Q.shape != (m, m) or c.shape != (m,):
        raise BalanceKitError("Q must be m x m and c length m")
    asym = np.abs(Q - Q.T).max()
    scale = max(1.0, np.abs(Q).max())
    if asym > 1e-8 * scale:
        raise BalanceKitError("Q must be symmetric")
    eigs = np.linalg.eigvalsh(Q)
    if eigs.min() < -1e-8 * scale:
        raise BalanceKitError(f"Q is not PSD (min eigenvalue {eigs.min():.3g})")
    if wset.kind not in ("general", "simplex", "b-simplex"):
        raise BalanceKitError(f"qp_over_set handles convex sets, not {wset.kind!r}")

    t0 = time.perf_counter()
    if wset.kind == "general":
        w, *_ = np.linalg.lstsq(Q, -c, rcond=None)
        g = Q @ w + c
        residual = float(np.abs(g).max())
        diag = SolveDiagnostics(
            objective=float(0.5 * w @ Q @ w + c @ w),
            residual_inf_norm=residual,
            iterations=1,
            converged=residual <= max(opts.grad_tol, 1e-8 * scale),
            wall_time=time.perf_counter() - t0,
        )
        return w, diag

    x0 = wset.uniform()
    if opts.step_rule == "frank-wolfe":
        w, fx, residual, it = _frank_wolfe_simplex(Q, c, x0, opts)
    else:
        L = max(float(eigs.max()), 1e-12)
        proj = lambda v: project(v, wset)  # noqa: E731
        fun = lambda x: float(0.5 * x @ Q @ x + c @ x)  # noqa: E731
        w, fx, residual, it = projected_descent(
            fun, lambda x: Q @ x + c, proj, x0, opts, lipschitz=L)
        if residual > opts.grad_tol:
            # PG is sublinear on degenerate Q; finish with an active-set
            # KKT solve seeded by the PG iterate's support.
            b_cap = wset.b if wset.kind == "b-simplex" else np.inf
            w2 = _polish_qp_simplex(Q, c, w, b_cap)
            if w2 is not None and fun(w2) <= fx + 1e-12:
                w, fx = w2, fun(w2)
                residual = float(np.abs(w - proj(w - (Q @ w + c))).max())
    f_uniform = float(0.5 * x0 @ Q @ x0 + c @ x0)
    diag = SolveDiagnostics(
        objective=min(fx, f_uniform),
        residual_inf_norm=residual,
        iterations=it,
        converged=residual <= opts.grad_tol,
        wall_time=time.perf_counter() - t0,
    )
    if fx > f_uniform:  # never worse than the canonical feasible point
        w = x0
    return w, diag


def moment_newton(g, jac, beta0, opts: SolverOptions = SolverOptions()):
    """Damped Newton root finder for a just-identified system g(beta) = 0.

    Backtracks on ||g||; on stall, retries from up to 5 seeded random
    perturbations of the best iterate before giving up.
    """
    beta0 = np.asarray(beta0, dtype=float)
    rng = np.random.default_rng(opts.seed)
    t0 = time.perf_counter()
    best_beta, best_norm = beta0.copy(), float(np.abs(g(beta0)).max())
    total_it = 0

    def run(start):
        nonlocal total_it
        beta = start.copy()
        r = g(beta)
        nrm = np.linalg.norm(r)
        for _ in range(opts.max_iters):
            total_it += 1
            if np.abs(r).max() <= opts.grad_tol:
                return beta, True
            J = jac(beta)
            try:
                step = np.linalg.solve(J, -r)
            except np.linalg.LinAlgError:
                step, *_ = np.linalg.lstsq(J, -r, rcond=None)
            t = 1.0
            moved = False
            for _ in range(60):
                cand = beta + t * step
                rc = g(cand)
                nc = np.linalg.norm(rc)
                if np.isfinite(nc) and nc < nrm * (1 - SUFFICIENT_DECREASE * t):
                    beta, r, nrm = cand, rc, nc
                    moved = True
                    break
                t *= 0.5
            if not moved:
                return beta, False
        return beta, np.abs(r).max() <= opts.grad_tol

    start = beta0
    for attempt in range(6):
        beta, ok = run(start)
        res = float(np.abs(g(beta)).max())
        if res < best_norm:
            best_beta, best_norm = beta, res
        if ok:
            diag = SolveDiagnostics(
                objective=best_norm,
                residual_inf_norm=best_norm,
                iterations=total_it,
                converged=True,
                wall_time=time.perf_counter() - t0,
            )
            return best_beta, diag
        start = best_beta + rng.normal(scale=0.5, size=beta0.size)
    raise ConvergenceError(
        f"moment system did not converge (best residual {best_norm:.3g})",
        best_residual=best_norm,
    )


def elastic_net(X, y, lam, gamma, opts: SolverOptions = SolverOptions()):
    """Cyclic coordinate descent for
    min_a ||y - X a||^2 + lam * ((1 - gamma) ||a||^2 + gamma ||a||_1).

    With gamma = 0 this matches the ridge closed form
    (X'X + lam I)^{-1} X'y. The KKT subgradient residual at exit is
    below 1e-7 (relative to the gradient scale).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if lam < 0 or not (0 <= gamma <= 1):
        raise BalanceKitError("need lam >= 0 and gamma in [0, 1]")
    n, p = X.shape
    col_sq = (X * X).sum(axis=0)
    alpha = np.zeros(p)
    r = y.copy()  # residual y - X alpha
    l1 = lam * gamma
    l2 = lam * (1.0 - gamma)
    for _ in range(max(opts.max_iters, 100)):
        max_delta = 0.0
        for j in range(p):
            if col_sq[j] == 0.0 and l2 == 0.0:
                continue
            rho = X[:, j] @ r + col_sq[j] * alpha[j]
            new = _soft_threshold(rho, l1 / 2.0) / (col_sq[j] + l2)
            delta = new - alpha[j]
            if delta != 0.0:
                r -= delta * X[:, j]
                alpha[j] = new
                max_delta = max(max_delta, abs(delta))
        if max_delta <= 1e-12:
            break
    return alpha


def _soft_threshold(x, t):
    if x > t:
        return x - t
    if x < -t:
        return x + t
    return 0.0


def elastic_net_kkt_residual(X, y, alpha, lam, gamma):
    """Max violation of the elastic-net subgradient optimality conditions."""
    X = np.asarray(X, dtype=float)
    grad = -2.0 * X.T @ (y - X @ alpha) + 2.0 * lam * (1 - gamma) * alpha
    l1 = lam * gamma
    res = np.where(
        alpha != 0.0,
        np.abs(grad + l1 * np.sign(alpha)),
        np.maximum(np.abs(grad) - l1, 0.0),
    )
    return float(res.max()) if res.size else 0.0


def logistic_fit(X, z, ridge: float = 1e-8, opts: SolverOptions = SolverOptions()):
    """Ridge-penalized logistic regression by Newton-Raphson.

    The small default ridge keeps the Hessian invertible under (near-)
    separation. Returns the coefficients and fitted probabilities.
    """
    X = np.asarray(X, dtype=float)
    z = np.asarray(z, dtype=float)
    n, p = X.shape
    if len(np.unique(z)) < 2:
        raise BalanceKitError("both label classes must be present")
    beta = np.zeros(p)

    def nll(b):
        s = X @ b
        # log(1 + e^s) - z*s, stably
        return float(np.sum(np.logaddexp(0.0, s) - z * s) + ridge * b @ b)

    fval = nll(beta)
    converged = False
    for _ in range(opts.max_iters):
        prob = _sigmoid(X @ beta)
        grad = X.T @ (prob - z) + 2.0 * ridge * beta
        if np.abs(grad).max() <= max(opts.grad_tol, 1e-9 * n):
            converged = True
            break
        Wd = prob * (1.0 - prob)
        H = (X.T * Wd) @ X + 2.0 * ridge * np.eye(p)
        try:
            step = np.linalg.solve(H, -grad)
        except np.linalg.LinAlgError:
            step = -grad
        t = 1.0
        moved = False
        for _ in range(60):
            cand = beta + t * step
            fc = nll(cand)
            if fc <= fval + SUFFICIENT_DECREASE * t * (grad @ step):
                beta, fval = cand, fc
                moved = True
                break
            t *= 0.5
        if not moved:
            break
    if not converged:
        prob = _sigmoid(X @ beta)
        grad = X.T @ (prob - z) + 2.0 * ridge * beta
        if np.abs(grad).max() > max(opts.grad_tol, 1e-6 * n):
            raise ConvergenceError(
                f"logistic fit stalled (gradient norm {np.abs(grad).max():.3g})",
                best_residual=float(np.abs(grad).max()),
            )
    prob = _sigmoid(X @ beta)
    return beta, np.clip(prob, 1e-12, 1 - 1e-12)


def _sigmoid(s):
    out = np.empty_like(s, dtype=float)
    pos = s >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-s[pos]))
    es = np.exp(s[~pos])
    out[~pos] = es / (1.0 + es)
    return out


def logistic_gradient(X, z, beta, ridge: float = 0.0):
    """Gradient of the (ridge-penalized) negative log-likelihood."""
    X = np.asarray(X, dtype=float)
    return X.T @ (_sigmoid(X @ beta) - np.asarray(z, dtype=float)) + 2.0 * ridge * beta


def subset_search(objective, universe: int, n_prime: int, mode: str = "local",
                  opts: SolverOptions = SolverOptions(), n_starts: int = 5):
    """Minimize a set function over all size-n' subsets of range(universe).

    Exhaustive mode enumerates every subset (budget C(m, n') <= 2e6) with
    lowest-lexicographic tie-breaking. Local mode runs greedy construction
    followed by best-improvement single swaps, from several seeded starts.
    """
    if n_prime > universe:
        raise BalanceKitError("n_prime exceeds universe size")
    if n_prime == universe:
        full = tuple(range(universe))
        return full, float(objective(full))
    if mode == "exhaustive":
        if math.comb(universe, n_prime) > 2_000_000:
            raise BalanceKitError("exhaustive subset budget exceeded")
        best, best_val = None, np.inf
        for comb in itertools.combinations(range(universe), n_prime):
            val = objective(comb)
            if val < best_val:  # combinations() is lexicographic: first win = lowest tie
                best, best_val = comb, val
        return best, float(best_val)
    if mode != "local":
        raise BalanceKitError(f"unknown subset search mode {mode!r}")

    rng = np.random.default_rng(opts.seed)
    best, best_val = None, np.inf
    for start in range(n_starts):
        if start == 0:
            current = _greedy_subset(objective, universe, n_prime)
        else:
            current = tuple(sorted(rng.choice(universe, size=n_prime, replace=False)))
        val = float(objective(current))
        current, val = _swap_descent(objective, universe, current, val)
        if val < best_val or (val == best_val and (best is None or current < best)):
            best, best_val = current, val
    return best, float(best_val)


def _greedy_subset(objective, universe, n_prime):
    chosen: list[int] = []
    remaining = list(range(universe))
    for _ in range(n_prime):
        vals = [float(objective(tuple(sorted(chosen + [c])))) for c in remaining]
        k = int(np.argmin(vals))
        chosen.append(remaining.pop(k))
    return tuple(sorted(chosen))


def _swap_descent(objective, universe, current, val):
    inside = set(current)
    improved = True
    while improved:
        improved = False
        best_move, best_val = None, val
        outside = [c for c in range(universe) if c not in inside]
        for i in inside:
            for o in outside:
                cand = tuple(sorted((inside - {i}) | {o}))
                v = float(objective(cand))
                if v < best_val - 1e-15:
                    best_move, best_val = cand, v
        if best_move is not None:
            inside = set(best_move)
            val = best_val
            improved = True
    return tuple(sorted(inside)), val
