"""Reference solutions, error series and rate checks."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .problem import ProblemSpec, prox_h


@dataclass
class ReferenceSolution:
    value: float
    x: np.ndarray
    residual: float
    iterations: int


def _apg(grad, value, prox, x0, L, tol, max_iter, residual):
    """FISTA with function-value restart; stops on ``residual(x) <= tol``."""
    x = y = x0.copy()
    t = 1.0
    fx = value(x)
    res = residual(x)
    for it in range(1, max_iter + 1):
        if res <= tol:
            return x, res, it - 1
        x_new = prox(y - grad(y) / L, 1.0 / L)
        f_new = value(x_new)
        if f_new > fx:
            # restart from the last iterate with a plain proximal step
            t = 1.0
            y = x
            x_new = prox(x - grad(x) / L, 1.0 / L)
            f_new = value(x_new)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = x_new + ((t - 1.0) / t_new) * (x_new - x)
        x, fx, t = x_new, f_new, t_new
        res = residual(x)
    if res <= tol:
        return x, res, max_iter
    raise RuntimeError(f"reference solver stopped at residual {res:.3e} after {max_iter} iterations")


def reference_optimum(problem: ProblemSpec, tol: float = 1e-10, max_iter: int = 200000, x0=None) -> ReferenceSolution:
    """Minimize ``sum_i phi_i(x)`` over a common ``x`` by accelerated proximal gradient.

    ``tol`` bounds the proximal-gradient residual ``||x - prox(x - grad/L)|| * L``.
    """
    n, d = problem.n, problem.d
    L = float(np.sum(problem.smoothness))
    L = L if L > 0 else 1.0
    reg = problem.reg.scaled(n)

    def f(x):
        return sum(loss.value(x) for loss in problem.losses)

    def grad(x):
        return sum(loss.grad(x) for loss in problem.losses)

    def value(x):
        return f(x) + reg.value(x)

    def prox(z, t):
        return prox_h(z, t, reg)

    def residual(x):
        return float(np.linalg.norm(x - prox(x - grad(x) / L, 1.0 / L)) * L)

    start = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float)
    x, res, it = _apg(grad, value, prox, start, L, tol, max_iter, residual)
    return ReferenceSolution(value(x), x, res, it)


def penalty(X, W, alpha: float) -> float:
    """``(1/2 alpha) x^T (I - W) x`` for stacked iterates."""
    X = np.asarray(X, dtype=float)
    return float(np.sum(X * (X - np.asarray(W) @ X))) / (2 * alpha)


def penalized_objective(problem: ProblemSpec, X, W, alpha: float) -> float:
    return problem.stacked_value(X) + penalty(X, W, alpha)


def prox_dgd_residual(problem: ProblemSpec, X, W, alpha: float) -> float:
    """``||X - prox_{alpha h}(W X - alpha grad f(X))||_inf``; zero exactly at the penalized optimum."""
    X = np.asarray(X, dtype=float)
    T = prox_h(np.asarray(W) @ X - alpha * problem.stacked_grad(X), alpha, problem.reg)
    return float(np.max(np.abs(X - T)))


def penalized_optimum(problem: ProblemSpec, W, alpha: float, tol: float = 1e-12, max_iter: int = 500000,
                      x0=None) -> ReferenceSolution:
    """Minimize ``f(x) + h(x) + (1/2 alpha) x^T (I - W) x`` over stacked iterates.

    Runs accelerated proximal gradient with step ``1/L``, where ``L`` bounds
    the smoothness of ``f + p``, until the Prox-DGD fixed-point residual is
    at most ``tol``.
    """
    W = np.asarray(W, dtype=float)
    n, d = problem.n, problem.d
    lam_max = float(np.max(np.linalg.eigvalsh(np.eye(n) - W)))
    L = float(np.max(problem.smoothness)) + lam_max / alpha
    L = L if L > 0 else 1.0
    reg = problem.reg

    def grad(X):
        return problem.stacked_grad(X) + (X - W @ X) / alpha

    def value(X):
        return penalized_objective(problem, X, W, alpha)

    def prox(Z, t):
        return prox_h(Z, t, reg)

    def residual(X):
        return prox_dgd_residual(problem, X, W, alpha)

    start = np.zeros((n, d)) if x0 is None else np.array(np.broadcast_to(x0, (n, d)), dtype=float)
    X, res, it = _apg(grad, value, prox, start, L, tol, max_iter, residual)
    return ReferenceSolution(value(X), X, res, it)


def block_max_sq(X, Xstar) -> float:
    """``||X - X*||_{b,inf}^2`` (largest squared Euclidean block distance)."""
    D = np.asarray(X) - np.asarray(Xstar)
    return float(np.max(np.sum(D * D, axis=-1)))


def distance_series(X_hist, Xstar) -> np.ndarray:
    """Per-snapshot ``max_i ||x_i - x_i*||_inf`` for a history of shape (S, n, d)."""
    return np.max(np.abs(np.asarray(X_hist) - Xstar), axis=(1, 2))


def error_series(X_hist, problem: ProblemSpec, f_star: float) -> np.ndarray:
    """``sum_i phi_i(xbar(t)) - f*`` with ``xbar(t)`` the node average."""
    return np.array([problem.global_objective(xb) - f_star for xb in np.asarray(X_hist).mean(axis=1)])


def consensus_error(X) -> float:
    X = np.asarray(X)
    return float(np.max(np.linalg.norm(X - X.mean(axis=0), axis=1)))


@dataclass
class EnvelopeReport:
    ok: bool
    violation: tuple | None = None

    def __bool__(self):
        return self.ok


def rate_envelope_check(X_hist, Xstar, rho: float, window: int, ticks=None, slack: float = 1e-9) -> EnvelopeReport:
    """Check ``||x_i^k - x_i*||^2 <= rho^floor(k/window) * max_j ||x_j^0 - x_j*||^2 + slack``.

    ``X_hist[0]`` must be the starting point. ``violation`` holds
    ``(k, i, lhs, rhs)`` for the first failure.
    """
    X_hist = np.asarray(X_hist)
    ticks = np.arange(len(X_hist)) if ticks is None else np.asarray(ticks)
    D = X_hist - Xstar
    sq = np.sum(D * D, axis=2)
    base = float(np.max(sq[0]))
    for s, k in enumerate(ticks):
        rhs = rho ** (int(k) // window) * base + slack
        i = int(np.argmax(sq[s]))
        if sq[s, i] > rhs:
            return EnvelopeReport(False, (int(k), i, float(sq[s, i]), rhs))
    return EnvelopeReport(True)


def window_lyapunov(X_hist, Xstar, window: int) -> np.ndarray:
    """``V^t``: the largest squared block distance over consecutive windows of ticks."""
    sq = np.max(np.sum((np.asarray(X_hist) - Xstar) ** 2, axis=2), axis=1)
    T = len(sq) // window
    return sq[: T * window].reshape(T, window).max(axis=1)


def contraction_factor(gammas, thetas) -> float:
    """``1 / (1 + min_i gamma_i theta_i)``."""
    return 1.0 / (1.0 + float(np.min(np.asarray(gammas) * np.asarray(thetas))))


def write_metrics_csv(path, rows) -> None:
    """Long-format ``iter,node,metric,value`` rows (node ``-1`` for global metrics)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "node", "metric", "value"])
        for r in rows:
            w.writerow([int(r[0]), int(r[1]), r[2], repr(float(r[3]))])


def trace_rows(trace, problem: ProblemSpec, f_star: float | None = None, x_star=None):
    """Metric rows for :func:`write_metrics_csv`."""
    avgs = trace.X.mean(axis=1)
    for s, k in enumerate(trace.ticks):
        if f_star is not None:
            yield k, -1, "train_error", problem.global_objective(avgs[s]) - f_star
        yield k, -1, "consensus_error", consensus_error(trace.X[s])
        if x_star is not None:
            for i in range(problem.n):
                yield k, i, "dist_to_penalized_opt", float(np.linalg.norm(trace.X[s, i] - x_star[i]))
    for r in trace.log:
        yield r.iteration, r.node, "gamma", r.gamma
        yield r.iteration, r.node, "attempts", r.attempts
        yield r.iteration, r.node, "subproblem_iterations", r.sub_iterations


def write_summary(path, summary: dict) -> None:
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=float)
