"""Bundle subproblem solver.

Each DPBM step solves

    min_x  max_t (g_t @ x + b_t) + h(x) + ||x - x_tilde||^2 / (2 gamma)

for a handful of affine pieces. With ``G = [g_1 .. g_T]`` the Lagrange dual of
the epigraph form is the concave program

    max_{v in simplex}  q(v) = b @ v + M(x_tilde - gamma G v)
                               + (||x_tilde||^2 - ||x_tilde - gamma G v||^2) / (2 gamma)

where ``M`` is the Moreau envelope of ``h`` with parameter ``gamma``. Its
gradient is ``b + G^T prox(x_tilde - gamma G v)`` and the primal solution is
recovered as ``prox(x_tilde - gamma G v_opt)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .problem import Regularizer, prox_h


@dataclass
class SubproblemInstance:
    G: np.ndarray
    b: np.ndarray
    x_tilde: np.ndarray
    gamma: float
    reg: Regularizer

    def __post_init__(self):
        self.G = np.atleast_2d(np.asarray(self.G, dtype=float))
        self.b = np.atleast_1d(np.asarray(self.b, dtype=float))
        self.x_tilde = np.asarray(self.x_tilde, dtype=float)
        if self.G.shape != (self.x_tilde.size, self.b.size):
            raise ValueError(
                f"slope matrix {self.G.shape} inconsistent with d={self.x_tilde.size}, T={self.b.size}"
            )
        if self.b.size < 1:
            raise ValueError("need at least one affine piece")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")

    @property
    def T(self) -> int:
        return self.b.size

    @property
    def d(self) -> int:
        return self.x_tilde.size


def shifted_center(x_k, neighbor_copies, weights, alpha: float, gamma: float) -> np.ndarray:
    """``x_k - (gamma/alpha) * sum_j w_ij (x_k - x_j)`` over the given neighbor copies."""
    x_k = np.asarray(x_k, dtype=float)
    drift = np.zeros_like(x_k)
    for xj, w in zip(neighbor_copies, weights):
        drift += w * (x_k - xj)
    return x_k - (gamma / alpha) * drift


def assemble_subproblem(model, x_k, neighbor_copies, weights, alpha: float, gamma: float,
                        reg: Regularizer) -> SubproblemInstance:
    """Stack the model's pieces (floor as a zero-slope cut) and the shifted center."""
    G, b = model.pieces()
    return SubproblemInstance(G, b, shifted_center(x_k, neighbor_copies, weights, alpha, gamma), gamma, reg)


def project_simplex(u) -> np.ndarray:
    """Euclidean projection onto ``{v >= 0, sum(v) = 1}`` (sort and threshold)."""
    u = np.asarray(u, dtype=float)
    if u.size == 1:
        return np.ones(1)
    s = np.sort(u)[::-1]
    css = np.cumsum(s) - 1.0
    k = np.arange(1, u.size + 1)
    rho = np.nonzero(s - css / k > 0)[0][-1]
    tau = css[rho] / (rho + 1)
    return np.maximum(u - tau, 0.0)


def moreau_value_grad(reg: Regularizer, gamma: float, z) -> tuple[float, np.ndarray]:
    """Moreau envelope ``min_x h(x) + ||x - z||^2/(2 gamma)`` and its gradient."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    z = np.asarray(z, dtype=float)
    p = prox_h(z, gamma, reg)
    r = z - p
    return reg.value(p) + float(r @ r) / (2 * gamma), r / gamma


def dual_objective(v, inst: SubproblemInstance) -> tuple[float, np.ndarray]:
    """Dual value ``q(v)`` and gradient."""
    v = np.asarray(v, dtype=float)
    if v.shape != (inst.T,):
        raise ValueError(f"dual variable has shape {v.shape}, expected ({inst.T},)")
    g = inst.gamma
    z = inst.x_tilde - g * (inst.G @ v)
    menv, _ = moreau_value_grad(inst.reg, g, z)
    p = prox_h(z, g, inst.reg)
    val = float(inst.b @ v) + menv + (float(inst.x_tilde @ inst.x_tilde) - float(z @ z)) / (2 * g)
    return val, inst.b + inst.G.T @ p


def primal_objective(x, inst: SubproblemInstance) -> float:
    x = np.asarray(x, dtype=float)
    r = x - inst.x_tilde
    return float(np.max(inst.G.T @ x + inst.b)) + inst.reg.value(x) + float(r @ r) / (2 * inst.gamma)


def recover_primal(v, inst: SubproblemInstance) -> np.ndarray:
    return prox_h(inst.x_tilde - inst.gamma * (inst.G @ np.asarray(v, dtype=float)), inst.gamma, inst.reg)


@dataclass
class DualResult:
    v: np.ndarray
    iterations: int
    residual: float
    converged: bool


def _residual(v, grad) -> float:
    return float(np.max(np.abs(v - project_simplex(v + grad))))


def solve_dual(inst: SubproblemInstance, tol: float = 1e-10, max_iter: int = 5000, v0=None,
               method: str = "fista", screen_after: int = 50) -> DualResult:
    """Maximize the dual over the simplex.

    ``method="fista"`` runs FISTA with gradient restart and step ``1/L`` where
    ``L = gamma * ||G_c||_2^2``; ``method="adaptive"`` runs projected gradient
    with the adaptive step of Malitsky and Mishchenko. Iteration stops when
    ``||v - P(v + grad q(v))||_inf <= tol``.

    Slopes are centred by their mean first. On the simplex ``G v`` only
    changes by a constant shift, so the optimizer and recovered primal are
    unchanged, but the Lipschitz constant now reflects the spread of the
    slopes instead of their magnitude.

    Every ``screen_after`` iterations the solve is restricted to the current
    support (re-centred, so an inactive outlier such as a floor piece no
    longer dictates the step) and an active-set Newton step is tried; each
    Newton round counts as one iteration. Pieces violating optimality on the
    full set are added back until the full residual meets ``tol``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    T = inst.T
    if T == 1:
        return DualResult(np.ones(1), 1, 0.0, True)
    gam, reg = inst.gamma, inst.reg

    def full_grad(v):
        return inst.b + inst.G.T @ prox_h(inst.x_tilde - gam * (inst.G @ v), gam, reg)

    v = np.full(T, 1.0 / T) if v0 is None else project_simplex(_fit(v0, T))
    g = full_grad(v)
    res = _residual(v, g)
    if res <= tol:
        return DualResult(v, 0, res, True)
    if method not in ("fista", "adaptive"):
        raise ValueError(f"unknown dual method {method!r}")

    S = np.arange(T)
    used = 0
    while True:
        budget = min(screen_after, max_iter - used)
        sub = _restricted(inst, S)
        solver = _fista if method == "fista" else _adaptive_pg
        vs, it = solver(sub, v[S] / max(v[S].sum(), 1e-300), tol, budget)
        used += it
        v = np.zeros(T)
        v[S] = vs
        g = full_grad(v)
        res = _residual(v, g)
        if res > tol and used < max_iter:
            # a Newton step on the current support often finishes the job
            v, res, rounds = _polish(inst, v, g, res)
            used += rounds
            g = full_grad(v)
        if res <= tol or used >= max_iter:
            break
        support = S[v[S] > 0]
        level = g[support].max()
        outside = np.setdiff1d(np.arange(T), support)
        S = np.union1d(support, outside[g[outside] >= level - tol])
    if res <= tol:
        v, res, _ = _polish(inst, v, g, res)
    return DualResult(v, max(used, 1), res, res <= tol)


def _polish(inst, v, g, res, rounds: int = 3):
    """Active-set Newton refinement of an approximate dual solution.

    With the support of ``v`` and the prox pattern of ``h`` frozen, the
    piece values ``b + G^T x(v)`` are affine in ``v``; one Newton step then
    equalizes them over the support. Steps are taken in centred slopes so
    that nearly parallel cuts stay resolvable. A step is kept only if it
    stays feasible and lowers the optimality residual. This matters because
    the primal error scales like ``residual / spread`` of the active slopes,
    not like the residual itself.
    """
    gam, reg = inst.gamma, inst.reg
    done = 0
    for _ in range(rounds):
        A = np.nonzero(v > 0)[0]
        if A.size < 2:
            break
        x = prox_h(inst.x_tilde - gam * (inst.G @ v), gam, reg)
        if reg.kind == "l1":
            free = x != 0
        elif reg.kind == "box":
            free = (x > np.broadcast_to(reg.lo, x.shape)) & (x < np.broadcast_to(reg.hi, x.shape))
        else:
            free = np.ones(x.size, dtype=bool)
        v_new = v.copy()
        g_base = g
        while True:
            GA = inst.G[np.ix_(free, A)]
            GA = GA - GA.mean(axis=1, keepdims=True)
            k = A.size
            K = np.zeros((k + 1, k + 1))
            K[:k, :k] = gam * (GA.T @ GA)
            K[:k, k] = 1.0
            K[k, :k] = 1.0
            rhs = np.append(g_base[A] - g_base[A].mean(), 0.0)
            trial = v_new.copy()
            trial[A] += np.linalg.lstsq(K, rhs, rcond=None)[0][:k]
            if not np.all(np.isfinite(trial)) or trial.min() >= -1e-12 or k <= 2:
                break
            # a weight wants to go negative: drop that piece and re-solve
            drop = A[np.argmin(trial[A])]
            v_new[drop] = 0.0
            v_new /= v_new.sum()
            A = A[A != drop]
            g_base = inst.b + inst.G.T @ prox_h(inst.x_tilde - gam * (inst.G @ v_new), gam, reg)
        if not np.all(np.isfinite(trial)):
            break
        v_new = project_simplex(np.maximum(trial, 0.0))
        g_new = inst.b + inst.G.T @ prox_h(inst.x_tilde - gam * (inst.G @ v_new), gam, reg)
        r_new = _residual(v_new, g_new)
        done += 1
        if r_new > res:
            break
        v, g, res = v_new, g_new, r_new
    return v, res, done


def _restricted(inst, S):
    G = inst.G[:, S]
    gbar = G.mean(axis=1)
    return (G - gbar[:, None], inst.b[S], inst.x_tilde - inst.gamma * gbar, inst.gamma, inst.reg)


def _fista(sub, v, tol, max_iter):
    Gc, b, xc, gam, reg = sub
    if b.size == 1:
        return np.ones(1), 1

    def grad(u):
        return b + Gc.T @ prox_h(xc - gam * (Gc @ u), gam, reg)

    L = gam * np.linalg.norm(Gc, 2) ** 2
    L = max(L, 1e-12 * (1.0 + float(np.max(np.abs(b)))))
    y, t = v.copy(), 1.0
    gy = grad(y)
    for it in range(1, max_iter + 1):
        v_new = project_simplex(y + gy / L)
        g_new = grad(v_new)
        if _residual(v_new, g_new) <= tol:
            return v_new, it
        if (y - v_new) @ (v_new - v) > 0:
            # momentum points uphill in -q: restart
            t = 1.0
            y, gy = v_new, g_new
        else:
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            y = v_new + ((t - 1.0) / t_new) * (v_new - v)
            t = t_new
            gy = grad(y)
        v = v_new
    return v, max_iter


def _adaptive_pg(sub, v, tol, max_iter):
    Gc, b, xc, gam, reg = sub
    if b.size == 1:
        return np.ones(1), 1

    def grad(u):
        return b + Gc.T @ prox_h(xc - gam * (Gc @ u), gam, reg)

    L = gam * np.linalg.norm(Gc, 2) ** 2
    lam_prev = 1.0 / max(L, 1e-12)
    theta = 1e12
    v_prev, g_prev = v, grad(v)
    v = project_simplex(v + lam_prev * g_prev)
    for it in range(1, max_iter + 1):
        g = grad(v)
        if _residual(v, g) <= tol:
            return v, it
        dv = np.linalg.norm(v - v_prev)
        dg = np.linalg.norm(g - g_prev)
        lam = np.sqrt(1.0 + theta) * lam_prev
        if dg > 0:
            lam = min(lam, dv / (2.0 * dg))
        theta = lam / lam_prev
        v_prev, g_prev, lam_prev = v, g, lam
        v = project_simplex(v + lam * g)
    return v, max_iter


def _fit(v0, T):
    v0 = np.asarray(v0, dtype=float)
    if v0.size >= T:
        return v0[-T:]
    return np.concatenate([np.zeros(T - v0.size), v0])


def solve_subproblem(inst: SubproblemInstance, tol: float = 1e-10, max_iter: int = 5000, v0=None,
                     method: str = "fista") -> tuple[np.ndarray, DualResult]:
    """Primal minimizer via the dual, together with the dual result."""
    res = solve_dual(inst, tol, max_iter, v0, method)
    return recover_primal(res.v, inst), res


def brute_force_primal(inst: SubproblemInstance, tol: float = 1e-12) -> np.ndarray:
    """Solve the primal epigraph program directly with an interior-point QP solver.

    This route never touches the dual; it is the reference the dual solver is
    checked against.
    """
    import cvxpy as cp

    if inst.T == 1 and inst.reg.kind == "zero":
        return inst.x_tilde - inst.gamma * inst.G[:, 0]
    x = cp.Variable(inst.d)
    y = cp.Variable()
    obj = y + cp.sum_squares(x - inst.x_tilde) / (2 * inst.gamma)
    cons = [inst.G.T @ x + inst.b <= y]
    if inst.reg.kind == "l1":
        obj = obj + inst.reg.lam * cp.norm1(x)
    elif inst.reg.kind == "box":
        lo = np.broadcast_to(inst.reg.lo, (inst.d,))
        hi = np.broadcast_to(inst.reg.hi, (inst.d,))
        cons += [x >= lo, x <= hi]
    prob = cp.Problem(cp.Minimize(obj), cons)
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=tol, tol_gap_rel=tol, tol_feas=tol,
               tol_ktratio=1e-10, max_iter=500)
    if x.value is None:
        raise RuntimeError(f"reference QP solve failed: {prob.status}")
    out = np.asarray(x.value, dtype=float)
    if inst.reg.kind == "box":
        out = np.clip(out, inst.reg.lo, inst.reg.hi)
    return out
