"""Piecewise-linear minorants (bundle models) and their update rules.

Four policies are supported:

``polyak``
    newest linearization together with a constant floor ``c_f``.
``cutting_plane``
    the last ``M`` linearizations of the node's own updates (FIFO window).
``polyak_cutting_plane``
    ``cutting_plane`` plus the floor.
``two_cut``
    an aggregate cut of the previous model and the newest linearization.

Cuts are stored in absolute form ``x -> g @ x + b``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

POLICIES = ("polyak", "cutting_plane", "polyak_cutting_plane", "two_cut")


@dataclass(frozen=True)
class Cut:
    g: np.ndarray
    b: float
    origin: int = 0

    def __call__(self, x) -> float:
        return float(self.g @ x + self.b)


def linearization(f_val: float, grad, x0, origin: int = 0) -> Cut:
    """Tangent ``f_val + <grad, x - x0>`` stored as ``g @ x + b``."""
    g = np.array(grad, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    if not (np.all(np.isfinite(g)) and np.isfinite(f_val)):
        raise ValueError("non-finite cut data")
    return Cut(g, float(f_val) - float(g @ x0), origin)


@dataclass(frozen=True)
class BundleModel:
    policy: str
    cuts: tuple = ()
    floor: float | None = None
    capacity: int = 1
    _G: np.ndarray = field(default=None, repr=False, compare=False)
    _b: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ValueError(f"unknown model policy {self.policy!r}")
        if self.capacity < 1:
            raise ValueError("capacity must be at least 1")
        if self.cuts:
            object.__setattr__(self, "_G", np.array([c.g for c in self.cuts]))
            object.__setattr__(self, "_b", np.array([c.b for c in self.cuts]))

    def __len__(self):
        return len(self.cuts)

    @property
    def slopes(self) -> np.ndarray:
        """Cut slopes as rows, shape (T, d)."""
        return self._G

    @property
    def intercepts(self) -> np.ndarray:
        return self._b

    def pieces(self) -> tuple[np.ndarray, np.ndarray]:
        """All affine pieces including the floor, as ``(G, b)`` with ``G`` of shape (d, T)."""
        if not self.cuts:
            raise ValueError("empty bundle model")
        G, b = self._G.T, self._b
        if self.floor is not None:
            G = np.column_stack([G, np.zeros(G.shape[0])])
            b = np.append(b, self.floor)
        return G, b

    def __call__(self, x) -> float:
        return model_value(self, x)


def model_value(m: BundleModel, x) -> float:
    """Max over cuts and floor."""
    if not m.cuts:
        raise ValueError("empty bundle model")
    v = float(np.max(m._G @ x + m._b))
    if m.floor is not None:
        v = max(v, m.floor)
    return v


def model_subgradient(m: BundleModel, x) -> np.ndarray:
    """Slope of an active piece at ``x``.

    Ties go to the lowest cut index; the floor is considered last and only
    wins when it is strictly above every cut.
    """
    if not m.cuts:
        raise ValueError("empty bundle model")
    vals = m._G @ x + m._b
    t = int(np.argmax(vals))
    if m.floor is not None and m.floor > vals[t]:
        return np.zeros(m._G.shape[1])
    return m._G[t].copy()


def empty_model(policy: str, capacity: int = 1, floor: float | None = None) -> BundleModel:
    if policy in ("polyak", "polyak_cutting_plane"):
        if floor is None or not np.isfinite(floor):
            raise ValueError(f"{policy} model needs a finite floor")
    else:
        floor = None
    return BundleModel(policy, (), floor, capacity if "cutting_plane" in policy else 1)


def _above(c_f, f_val) -> bool:
    # rounding slack for floors that equal the exact minimum
    return c_f > f_val + 1e-12 * (1.0 + abs(f_val))


def update_polyak(f_val: float, grad, x_k, c_f: float, origin: int = 0) -> BundleModel:
    """``max{f(x_k) + <grad, x - x_k>, c_f}``; previous state is discarded."""
    if _above(c_f, f_val):
        raise ValueError(f"floor {c_f} exceeds function value {f_val}; not a lower bound")
    return BundleModel("polyak", (linearization(f_val, grad, x_k, origin),), float(c_f), 1)


def update_cutting_plane(m: BundleModel, f_val: float, grad, x_k, origin: int = 0) -> BundleModel:
    """Append the linearization at ``x_k`` and keep the newest ``capacity`` cuts."""
    if m.policy not in ("cutting_plane", "polyak_cutting_plane"):
        raise ValueError(f"cutting-plane update on a {m.policy} model")
    if m.floor is not None and _above(m.floor, f_val):
        raise ValueError(f"floor {m.floor} exceeds function value {f_val}; not a lower bound")
    cuts = m.cuts + (linearization(f_val, grad, x_k, origin),)
    return replace(m, cuts=cuts[-m.capacity:])


def update_two_cut(m: BundleModel, x_next, f_val_next: float, grad_next, origin: int = 0) -> BundleModel:
    """Aggregate cut of ``m`` at ``x_next`` plus the fresh linearization there."""
    if not m.cuts:
        raise ValueError("empty bundle model")
    x_next = np.asarray(x_next, dtype=float)
    agg = linearization(model_value(m, x_next), model_subgradient(m, x_next), x_next, m.cuts[-1].origin)
    fresh = linearization(f_val_next, grad_next, x_next, origin)
    return BundleModel("two_cut", (agg, fresh), None, 1)


def initial_model(policy: str, f_val: float, grad, x0, capacity: int = 1, floor: float | None = None) -> BundleModel:
    """Model built from the starting point ``x0`` alone."""
    if policy == "polyak":
        return update_polyak(f_val, grad, x0, floor, 0)
    if policy == "two_cut":
        return BundleModel("two_cut", (linearization(f_val, grad, x0, 0),), None, 1)
    return update_cutting_plane(empty_model(policy, capacity, floor), f_val, grad, x0, 0)


def refresh(m: BundleModel, f_val: float, grad, x_new, origin: int) -> BundleModel:
    """Fold the information at the new iterate into ``m`` according to its policy."""
    if m.policy == "polyak":
        return update_polyak(f_val, grad, x_new, m.floor, origin)
    if m.policy == "two_cut":
        return update_two_cut(m, x_new, f_val, grad, origin)
    return update_cutting_plane(m, f_val, grad, x_new, origin)


# stochastic forms: the same updates fed with batch values and gradients


def _batch_info(loss, x, batch):
    return loss.value(x, batch), loss.grad(x, batch)


def stochastic_update_polyak(loss, x_k, batch, c_f: float, origin: int = 0) -> BundleModel:
    f_val, grad = _batch_info(loss, x_k, batch)
    return update_polyak(f_val, grad, x_k, c_f, origin)


def stochastic_update_cutting_plane(m: BundleModel, loss, x_k, batch, origin: int = 0) -> BundleModel:
    f_val, grad = _batch_info(loss, x_k, batch)
    return update_cutting_plane(m, f_val, grad, x_k, origin)


def stochastic_update_two_cut(m: BundleModel, loss, x_next, batch, origin: int = 0) -> BundleModel:
    f_val, grad = _batch_info(loss, x_next, batch)
    return update_two_cut(m, x_next, f_val, grad, origin)
