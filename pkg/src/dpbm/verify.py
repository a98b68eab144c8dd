"""Seeded property suites shared by the command line and the test-suite.

Each suite returns a :class:`SuiteReport`; ``counterexample`` holds the data
of the first failing case in JSON-friendly form.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import bundle
from .algorithms import AlgoConfig, prox_dgd_step
from .async_sim import run_simulation, schedule_partial, schedule_total, verify_schedule
from .graph import build_topology, metropolis_weights
from .problem import (Dataset, LogisticLoss, QuadraticLoss, Regularizer, logistic_problem,
                      random_quadratic_problem)
from .subproblem import (SubproblemInstance, brute_force_primal, dual_objective, primal_objective,
                         recover_primal, solve_dual)

SUITES = ("subproblem", "minorant", "reduction", "schedule")


@dataclass
class SuiteReport:
    suite: str
    passed: bool
    checks: int
    failures: int
    worst: dict = field(default_factory=dict)
    seconds: float = 0.0
    counterexample: dict | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _plain(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def random_subproblem(rng, T: int, d: int, kind: str) -> SubproblemInstance:
    """Random instance with standard-normal data and ``gamma`` in [0.1, 10]."""
    G = rng.standard_normal((d, T))
    b = rng.standard_normal(T)
    xt = rng.standard_normal(d)
    gamma = float(10.0 ** rng.uniform(-1, 1))
    if kind == "zero":
        reg = Regularizer.zero()
    elif kind == "l1":
        reg = Regularizer.l1(float(rng.uniform(0.05, 1.0)))
    else:
        reg = Regularizer.box(-0.5, 0.5)
    return SubproblemInstance(G, b, xt, gamma, reg)


def suite_subproblem(count: int = 100, seed: int = 0, tol: float = 1e-6) -> SuiteReport:
    """Dual route against a direct primal QP solve on random instances."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst_x = worst_gap = 0.0
    fails, first = 0, None
    for c in range(count):
        T = int(rng.choice([2, 5, 15]))
        d = int(rng.choice([2, 10]))
        kind = ("zero", "l1", "box")[c % 3]
        inst = random_subproblem(rng, T, d, kind)
        res = solve_dual(inst, tol=1e-12, max_iter=50000)
        x = recover_primal(res.v, inst)
        xb = brute_force_primal(inst)
        err = float(np.max(np.abs(x - xb)))
        gap = primal_objective(x, inst) - dual_objective(res.v, inst)[0]
        worst_x, worst_gap = max(worst_x, err), max(worst_gap, gap)
        if not (err <= tol and gap <= tol):
            fails += 1
            if first is None:
                first = {"case": c, "T": T, "d": d, "reg": kind, "error": err, "gap": gap,
                         "G": inst.G, "b": inst.b, "x_tilde": inst.x_tilde, "gamma": inst.gamma}
    return SuiteReport("subproblem", fails == 0, count, fails, {"primal_error": worst_x, "duality_gap": worst_gap},
                       time.perf_counter() - t0, _plain(first))


def _minorant_losses(rng, d):
    P = rng.standard_normal((2 * d, d))
    quad = QuadraticLoss.least_squares(P, rng.standard_normal(2 * d))
    A = rng.standard_normal((40, d))
    labels = np.where(rng.random(40) < 0.5, 1.0, -1.0)
    return [("quadratic", quad), ("logistic", LogisticLoss(Dataset(A, labels)))]


def suite_minorant(probes: int = 10000, seed: int = 0, tol: float = 1e-10, d: int = 4,
                   steps: int = 6) -> SuiteReport:
    """``m <= f <= m + (L/2)||x - x_k||^2`` for every policy after a few model updates.

    ``x_k`` is the newest anchor; the models are built along a short random
    walk so windowed policies hold several cuts.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    fails, first, checks = 0, None, 0
    worst_low = worst_high = -np.inf
    per = max(1, probes // 8)
    for name, loss in _minorant_losses(rng, d):
        floor = loss.floor if np.isfinite(loss.floor) else loss.value(np.zeros(d)) - 1e3
        L = loss.smoothness
        for policy in bundle.POLICIES:
            x = rng.standard_normal(d)
            m = bundle.initial_model(policy, loss.value(x), loss.grad(x), x, 4, floor)
            for k in range(steps):
                x = x + 0.5 * rng.standard_normal(d)
                m = bundle.refresh(m, loss.value(x), loss.grad(x), x, k + 1)
            Z = x + rng.standard_normal((per, d)) * rng.choice([0.01, 0.3, 3.0], size=(per, 1))
            for z in Z:
                f = loss.value(z)
                mv = bundle.model_value(m, z)
                low = mv - f
                high = f - mv - 0.5 * L * float((z - x) @ (z - x))
                worst_low, worst_high = max(worst_low, low), max(worst_high, high)
                checks += 1
                if low > tol * (1 + abs(f)) or high > tol * (1 + abs(f)):
                    fails += 1
                    if first is None:
                        first = {"loss": name, "policy": policy, "z": z, "x_k": x, "f": f, "m": mv}
    return SuiteReport("minorant", fails == 0, checks, fails,
                       {"model_above_f": float(worst_low), "f_above_upper": float(worst_high)},
                       time.perf_counter() - t0, _plain(first))


def suite_reduction(iterations: int = 100, seed: int = 0, tol: float = 1e-8, alpha: float = 0.2) -> SuiteReport:
    """Single-cut DPBM with ``gamma = alpha`` against matrix-form Prox-DGD."""
    t0 = time.perf_counter()
    g = build_topology("ring", 6)
    W = metropolis_weights(g)
    prob = random_quadratic_problem(6, 4, seed, theta=0.5, reg=Regularizer.l1(0.05))
    cfg = AlgoConfig(alpha=alpha, policy="cutting_plane", M=1, step="constant", gamma=alpha,
                     iterations=iterations, sub_tol=1e-13)
    x0 = np.random.default_rng(seed + 1).standard_normal((6, 4))
    tr = run_simulation(prob, g, W, cfg, x0=x0)
    X = x0.copy()
    dev, first = 0.0, None
    for k in range(iterations):
        X = prox_dgd_step(X, W, alpha, prob)
        e = float(np.max(np.abs(tr.X[k + 1] - X)))
        if e > dev:
            dev = e
        if e > tol and first is None:
            first = {"iteration": k + 1, "deviation": e}
    return SuiteReport("reduction", dev <= tol, iterations, int(first is not None), {"max_deviation": dev},
                       time.perf_counter() - t0, first)


def suite_schedule(seed: int = 0, horizon: int = 500) -> SuiteReport:
    """Generated schedules satisfy their own (B, D) or growth contract."""
    t0 = time.perf_counter()
    g = build_topology("ring", 8)
    fails, first, checks = 0, None, 0
    for B in (0, 1, 3):
        for D in (0, 2, 5, 20):
            sch = schedule_partial(g, horizon, B, D, seed=seed + 10 * B + D)
            rep = verify_schedule(sch, B, D)
            checks += 1
            if not rep.ok:
                fails += 1
                first = first or {"mode": "partial", "B": B, "D": D, "violation": list(rep.violations[0])}
    sch = schedule_total(g, horizon, seed=seed)
    rep = verify_schedule(sch)
    checks += 1
    if not rep.ok:
        fails += 1
        first = first or {"mode": "total", "violation": list(rep.violations[0])}
    return SuiteReport("schedule", fails == 0, checks, fails, {}, time.perf_counter() - t0, _plain(first))


def run_suite(name: str, **kwargs) -> SuiteReport:
    fn = {"subproblem": suite_subproblem, "minorant": suite_minorant,
          "reduction": suite_reduction, "schedule": suite_schedule}.get(name)
    if fn is None:
        raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")
    return fn(**kwargs)
