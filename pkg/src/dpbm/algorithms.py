"""Node-level update rules: DPBM (deterministic and stochastic), step sizes, Prox-DGD."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import bundle
from .problem import ProblemSpec, prox_h, sample_batch
from .subproblem import DualResult, assemble_subproblem, solve_dual, recover_primal

MAX_BACKTRACKS = 1000


@dataclass
class AlgoConfig:
    """Algorithm settings shared by every node.

    ``step`` selects the step-size rule: ``"fixed"`` uses
    ``eta / (beta_i + (1 - w_ii)/alpha)`` with ``beta_i`` the smoothness
    constant (doubled in stochastic mode), ``"backtracking"`` adapts it from
    observed model errors, and ``"constant"`` uses ``gamma`` for every node.
    ``batch_size = 0`` means exact function values and gradients; a batch
    at least as large as a node's shard is exact as well.
    """

    alpha: float = 20.0
    method: str = "dpbm"
    policy: str = "polyak_cutting_plane"
    M: int = 10
    step: str = "fixed"
    eta: float = 0.9
    c: float = 0.5
    gamma_init: float = 1.0
    gamma: float | None = None
    batch_size: int = 0
    iterations: int = 150
    sub_tol: float = 1e-11
    sub_max_iter: int = 20000

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.method not in ("dpbm", "prox_dgd"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.policy not in bundle.POLICIES:
            raise ValueError(f"unknown model policy {self.policy!r}")
        if self.M < 1:
            raise ValueError("M must be at least 1")
        if self.step not in ("fixed", "backtracking", "constant"):
            raise ValueError(f"unknown step rule {self.step!r}")
        if not 0 < self.eta < 1:
            raise ValueError("eta must lie in (0, 1)")
        if not 0 < self.c < 1:
            raise ValueError("c must lie in (0, 1)")
        if not self.gamma_init > 0:
            raise ValueError("gamma_init must be positive")
        if self.step == "constant" and not (self.gamma and self.gamma > 0):
            raise ValueError("constant step needs gamma > 0")
        if self.batch_size < 0:
            raise ValueError("batch_size must be >= 0")

    @property
    def stochastic(self) -> bool:
        return self.batch_size > 0


@dataclass
class UpdateRecord:
    iteration: int
    node: int
    gamma: float
    attempts: int
    sub_iterations: int
    beta: float = float("nan")


@dataclass
class NodeState:
    """Everything one node owns: its iterate, neighbor copies, model and step state."""

    id: int
    x: np.ndarray
    neighbors: list
    weights: np.ndarray
    w_ii: float
    copies: dict = field(default_factory=dict)
    tags: dict = field(default_factory=dict)
    model: bundle.BundleModel | None = None
    gamma: float = 0.0
    gamma_carry: float = 0.0
    rng: np.random.Generator | None = None
    updates: int = 0

    def receive(self, j: int, xj, tag: int) -> None:
        """Store ``x_j``; older versions than the one held are dropped."""
        if tag >= self.tags.get(j, -1):
            self.copies[j] = np.asarray(xj, dtype=float)
            self.tags[j] = tag

    def neighbor_copies(self) -> list:
        return [self.copies[j] for j in self.neighbors]


def fixed_step(beta: float, w_ii: float, alpha: float, eta: float) -> float:
    """Delay-independent step ``eta / (beta + (1 - w_ii)/alpha)``."""
    if not 0 < eta < 1:
        raise ValueError("eta must lie in (0, 1)")
    if w_ii <= 0 or w_ii > 1:
        raise ValueError(f"self weight must lie in (0, 1], got {w_ii}")
    if beta < 0 or not alpha > 0:
        raise ValueError("need beta >= 0 and alpha > 0")
    denom = beta + (1.0 - w_ii) / alpha
    if denom == 0:
        raise ValueError("step is unbounded for beta = 0 and w_ii = 1")
    return eta / denom


def compute_beta_k(f_new: float, m_new: float, dx_sqnorm: float, stochastic: bool = False) -> float:
    """Curvature ``2 (f_new - m_new) / ||dx||^2`` seen along the last step."""
    if dx_sqnorm < 0:
        raise ValueError("squared norm must be nonnegative")
    gap = f_new - m_new
    if gap < -1e-12 * (1.0 + abs(f_new)):
        if not stochastic:
            raise ValueError(f"model exceeds the function by {-gap:.3e}; not a minorant")
    if dx_sqnorm <= 1e-16:
        return 0.0
    return max(2.0 * gap / dx_sqnorm, 0.0)


def backtracking_bound(gamma_init: float, beta: float, w_ii: float, alpha: float, eta: float, c: float) -> int:
    """Worst-case number of attempts when starting from ``gamma_init``."""
    ratio = gamma_init * (beta + (1.0 - w_ii) / alpha) / eta
    if ratio <= 1:
        return 1
    return math.ceil(math.log(ratio) / math.log(1.0 / c)) + 1


def make_node(i: int, x0, W, neighbors, problem: ProblemSpec, config: AlgoConfig, rng=None) -> NodeState:
    """Initial state of node ``i``: copies of the neighbors' starting points are
    filled in by the caller via :meth:`NodeState.receive`."""
    W = np.asarray(W, dtype=float)
    node = NodeState(
        id=i,
        x=np.array(x0, dtype=float),
        neighbors=list(neighbors),
        weights=np.array([W[i, j] for j in neighbors]),
        w_ii=float(W[i, i]),
        rng=rng,
    )
    if config.method == "dpbm":
        loss = problem.losses[i]
        if config.stochastic and getattr(loss, "n_samples", None) is None:
            raise ValueError(f"node {i}: batch sampling needs a sample-based loss")
        f0, g0 = local_info(node, loss, node.x, config)
        node.model = bundle.initial_model(config.policy, f0, g0, node.x, config.M, problem.floors[i])
        node.gamma = initial_step(node, problem, config)
        node.gamma_carry = config.gamma_init
    return node


def initial_step(node: NodeState, problem: ProblemSpec, config: AlgoConfig) -> float:
    """Step used by the ``fixed`` and ``constant`` rules.

    Only ``(beta_i, w_ii, alpha, eta)`` enter; no delay information is used.
    """
    if config.step == "constant":
        return float(config.gamma)
    loss = problem.losses[node.id]
    beta = loss.smoothness
    if config.stochastic and config.batch_size < loss.n_samples:
        # a batch covering the whole shard is exact, so no doubling
        beta = 2.0 * beta
    if node.w_ii == 1.0 and beta == 0.0:
        return config.gamma_init
    return fixed_step(beta, node.w_ii, config.alpha, config.eta)


def draw_batch(node: NodeState, loss, config: AlgoConfig):
    if not config.stochastic:
        return None
    size = min(config.batch_size, loss.n_samples)
    return sample_batch(loss.n_samples, size, node.rng)


def local_info(node: NodeState, loss, x, config: AlgoConfig, batch=None):
    """Function value and gradient at ``x`` (on a fresh batch in stochastic mode)."""
    if config.stochastic and batch is None:
        batch = draw_batch(node, loss, config)
    return loss.value(x, batch), loss.grad(x, batch)


def dpbm_node_update(node: NodeState, reg, alpha: float, gamma: float, tol: float = 1e-11,
                     max_iter: int = 20000) -> tuple[np.ndarray, DualResult]:
    """Minimize the node's surrogate with step ``gamma``; the model is not touched."""
    if node.model is None or len(node.model) == 0:
        raise ValueError(f"node {node.id}: empty bundle model")
    inst = assemble_subproblem(node.model, node.x, node.neighbor_copies(), node.weights, alpha, gamma, reg)
    res = solve_dual(inst, tol, max_iter)
    if not res.converged and not np.isfinite(res.residual):
        raise RuntimeError(f"node {node.id}: subproblem solver failed (residual {res.residual})")
    return recover_primal(res.v, inst), res


def backtracking_update(node: NodeState, loss, reg, config: AlgoConfig, batch=None):
    """Back-tracking step search.

    Returns ``(x_new, gamma_used, gamma_next, attempts, (f_new, g_new), dual)``.
    """
    alpha, eta, c = config.alpha, config.eta, config.c
    delta = (1.0 - node.w_ii) / alpha
    gamma = node.gamma_carry
    total_iters = 0
    for attempts in range(1, MAX_BACKTRACKS + 1):
        x_new, res = dpbm_node_update(node, reg, alpha, gamma, config.sub_tol, config.sub_max_iter)
        total_iters += res.iterations
        f_new, g_new = loss.value(x_new, batch), loss.grad(x_new, batch)
        dx = x_new - node.x
        beta_k = compute_beta_k(f_new, bundle.model_value(node.model, x_new), float(dx @ dx), config.stochastic)
        bound = eta / (beta_k + delta) if beta_k + delta > 0 else np.inf
        nxt = c * bound
        if gamma <= bound:
            res.iterations = total_iters
            return x_new, gamma, nxt, attempts, (f_new, g_new), res, beta_k
        gamma = nxt
    raise RuntimeError(f"node {node.id}: back-tracking exceeded {MAX_BACKTRACKS} attempts")


def node_step(node: NodeState, problem: ProblemSpec, config: AlgoConfig, k: int) -> UpdateRecord:
    """Full DPBM update of one active node at global iteration ``k``.

    Solves the surrogate, then folds the new iterate's value and gradient
    (or batch estimates) into the model.
    """
    loss = problem.losses[node.id]
    if config.method == "prox_dgd":
        node.x = prox_dgd_node_update(node, loss, problem.reg, config.alpha)
        node.updates += 1
        return UpdateRecord(k, node.id, config.alpha, 1, 0)

    batch = draw_batch(node, loss, config)
    try:
        if config.step == "backtracking":
            x_new, gamma, node.gamma_carry, attempts, (f_new, g_new), res, beta_k = backtracking_update(
                node, loss, problem.reg, config, batch)
        else:
            gamma, attempts, beta_k = node.gamma, 1, float("nan")
            x_new, res = dpbm_node_update(node, problem.reg, config.alpha, gamma, config.sub_tol,
                                          config.sub_max_iter)
            f_new, g_new = loss.value(x_new, batch), loss.grad(x_new, batch)
    except (ValueError, RuntimeError) as exc:
        raise RuntimeError(f"node {node.id}, iteration {k}: {exc}") from exc
    node.model = bundle.refresh(node.model, f_new, g_new, x_new, k + 1)
    node.x = x_new
    node.updates += 1
    return UpdateRecord(k, node.id, gamma, attempts, res.iterations, beta_k)


def stochastic_node_update(node: NodeState, problem: ProblemSpec, config: AlgoConfig, k: int) -> UpdateRecord:
    """:func:`node_step` with batch estimates; ``config.batch_size`` must be positive."""
    if not config.stochastic:
        raise ValueError("stochastic update requires batch_size > 0")
    return node_step(node, problem, config, k)


# ---------------------------------------------------------------------------
# Prox-DGD


def prox_dgd_node_update(node: NodeState, loss, reg, alpha: float) -> np.ndarray:
    mixed = node.w_ii * node.x
    for xj, w in zip(node.neighbor_copies(), node.weights):
        mixed = mixed + w * xj
    return prox_h(mixed - alpha * loss.grad(node.x), alpha, reg)


def prox_dgd_step(X, W, alpha: float, problem: ProblemSpec) -> np.ndarray:
    """Matrix form ``prox_{alpha h}(W X - alpha grad f(X))`` on stacked iterates."""
    X = np.asarray(X, dtype=float)
    if X.shape != (problem.n, problem.d):
        raise ValueError(f"X has shape {X.shape}, expected {(problem.n, problem.d)}")
    return prox_h(np.asarray(W) @ X - alpha * problem.stacked_grad(X), alpha, problem.reg)
