"""Local objectives, regularizers and datasets.

Each node ``i`` owns a composite objective ``phi_i = f_i + h_i`` where ``f_i``
is a smooth loss (quadratic or logistic over a data shard) and ``h_i`` is a
proximable regularizer (zero, l1 or a box indicator).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np


# ---------------------------------------------------------------------------
# datasets


@dataclass(frozen=True)
class Dataset:
    """Feature matrix ``A`` (rows ``a_j``) and labels ``b`` in {-1, +1}."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.ascontiguousarray(self.A, dtype=float)
        b = np.ascontiguousarray(self.b, dtype=float)
        if A.ndim != 2:
            raise ValueError("feature matrix must be 2-D")
        if b.shape != (A.shape[0],):
            raise ValueError(f"label vector has shape {b.shape}, expected ({A.shape[0]},)")
        if b.size and not np.all(np.abs(b) == 1.0):
            raise ValueError("labels must be -1 or +1")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    def __len__(self):
        return self.A.shape[0]

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset(self.A[idx], self.b[idx])


def _check_batch(data: Dataset, idx):
    if idx is None:
        return None
    idx = np.asarray(idx, dtype=int)
    if idx.size == 0:
        raise ValueError("empty batch")
    if idx.min() < 0 or idx.max() >= len(data):
        raise IndexError("batch index out of range")
    return idx


def _rows(data: Dataset, idx):
    # the full shard is evaluated on the original arrays so that a full batch
    # reproduces the deterministic computation bit for bit
    if idx is None or len(idx) == len(data):
        return data.A, data.b
    return data.A[idx], data.b[idx]


# ---------------------------------------------------------------------------
# logistic loss


def _softplus(z):
    """Stable ``log(1 + exp(z))``."""
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logistic_value(x, data: Dataset, idx=None) -> float:
    """Average logistic loss ``mean(log(1 + exp(-b_j a_j^T x)))``.

    ``idx`` optionally restricts the average to a batch of rows.
    """
    x = np.asarray(x, dtype=float)
    if len(data) == 0:
        raise ValueError("empty dataset")
    if x.shape != (data.dim,):
        raise ValueError(f"x has shape {x.shape}, data dimension is {data.dim}")
    A, b = _rows(data, _check_batch(data, idx))
    return float(np.mean(_softplus(-b * (A @ x))))


def logistic_grad(x, data: Dataset, idx=None) -> np.ndarray:
    """Gradient ``mean(-b_j a_j sigmoid(-b_j a_j^T x))`` of :func:`logistic_value`."""
    x = np.asarray(x, dtype=float)
    if len(data) == 0:
        raise ValueError("empty dataset")
    if x.shape != (data.dim,):
        raise ValueError(f"x has shape {x.shape}, data dimension is {data.dim}")
    A, b = _rows(data, _check_batch(data, idx))
    s = _sigmoid(-b * (A @ x))
    return A.T @ (-b * s) / A.shape[0]


# ---------------------------------------------------------------------------
# smooth losses


class LogisticLoss:
    """Logistic loss over a data shard, plus an optional ``theta/2 ||x||^2``.

    Every per-sample loss is positive, so ``floor = 0`` is a valid lower bound
    for any batch.
    """

    kind = "logistic"

    def __init__(self, data: Dataset, theta: float = 0.0):
        if theta < 0:
            raise ValueError("theta must be nonnegative")
        if len(data) == 0:
            raise ValueError("empty dataset")
        self.data = data
        self.theta = float(theta)
        self.dim = data.dim
        m = len(data)
        # largest eigenvalue of A^T A / m; sigmoid' <= 1/4
        s = np.linalg.norm(data.A, 2) if data.A.size else 0.0
        self.smoothness = s * s / (4.0 * m) + self.theta
        self.floor = 0.0

    @property
    def n_samples(self) -> int:
        return len(self.data)

    def value(self, x, idx=None) -> float:
        v = logistic_value(x, self.data, idx)
        if self.theta:
            v += 0.5 * self.theta * float(x @ x)
        return v

    def grad(self, x, idx=None) -> np.ndarray:
        g = logistic_grad(x, self.data, idx)
        if self.theta:
            g = g + self.theta * np.asarray(x, dtype=float)
        return g


class QuadraticLoss:
    """``f(x) = 1/2 x^T P x + q^T x + r`` with ``P`` symmetric PSD.

    ``theta`` adds ``theta/2 ||x||^2``. The exact minimum is used as the
    floor when ``P + theta I`` is positive definite.
    """

    kind = "quadratic"
    n_samples = None

    def __init__(self, P, q, r: float = 0.0, theta: float = 0.0):
        P = np.atleast_2d(np.asarray(P, dtype=float))
        q = np.asarray(q, dtype=float)
        if P.shape[0] != P.shape[1] or q.shape != (P.shape[0],):
            raise ValueError("inconsistent quadratic dimensions")
        if not np.allclose(P, P.T, atol=1e-12):
            raise ValueError("P must be symmetric")
        if theta < 0:
            raise ValueError("theta must be nonnegative")
        self.P = P + theta * np.eye(P.shape[0])
        self.q = q
        self.r = float(r)
        self.theta = float(theta)
        self.dim = P.shape[0]
        eig = np.linalg.eigvalsh(self.P)
        if eig[0] < -1e-10:
            raise ValueError("P must be positive semidefinite")
        self.smoothness = float(max(eig[-1], 0.0))
        self.strong_convexity = float(max(eig[0], 0.0))
        if eig[0] > 1e-12:
            xmin = np.linalg.solve(self.P, -q)
            self.floor = float(self.value(xmin))
        else:
            self.floor = -np.inf

    @classmethod
    def least_squares(cls, M, y, theta: float = 0.0):
        """``1/2 ||M x - y||^2``."""
        M = np.atleast_2d(np.asarray(M, dtype=float))
        y = np.asarray(y, dtype=float)
        return cls(M.T @ M, -M.T @ y, 0.5 * float(y @ y), theta)

    def value(self, x, idx=None) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ (self.P @ x) + self.q @ x + self.r)

    def grad(self, x, idx=None) -> np.ndarray:
        return self.P @ np.asarray(x, dtype=float) + self.q


class ZeroLoss:
    """``f = 0``; handy for isolating the consensus term."""

    kind = "zero"
    n_samples = None
    smoothness = 0.0
    floor = 0.0
    theta = 0.0

    def __init__(self, dim: int):
        self.dim = int(dim)

    def value(self, x, idx=None) -> float:
        return 0.0

    def grad(self, x, idx=None) -> np.ndarray:
        return np.zeros(self.dim)


# ---------------------------------------------------------------------------
# regularizers


@dataclass(frozen=True)
class Regularizer:
    """Proximable regularizer ``h``.

    ``kind`` is ``"zero"``, ``"l1"`` (``lam * ||x||_1``) or ``"box"`` (indicator
    of ``lo <= x <= hi``).
    """

    kind: str = "zero"
    lam: float = 0.0
    lo: float | np.ndarray | None = None
    hi: float | np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("zero", "l1", "box"):
            raise ValueError(f"unknown regularizer {self.kind!r}")
        if self.lam < 0:
            raise ValueError("l1 weight must be nonnegative")
        if self.kind == "box":
            if self.lo is None or self.hi is None:
                raise ValueError("box regularizer needs lo and hi")
            if np.any(np.asarray(self.lo) > np.asarray(self.hi)):
                raise ValueError("box bounds must satisfy lo <= hi")

    @classmethod
    def zero(cls):
        return cls("zero")

    @classmethod
    def l1(cls, lam: float):
        return cls("l1", lam=float(lam))

    @classmethod
    def box(cls, lo, hi):
        return cls("box", lo=lo, hi=hi)

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if self.kind == "l1":
            return self.lam * float(np.abs(x).sum())
        if self.kind == "box":
            tol = 1e-12
            ok = np.all(x >= np.asarray(self.lo) - tol) and np.all(x <= np.asarray(self.hi) + tol)
            return 0.0 if ok else np.inf
        return 0.0

    def prox(self, z, t: float) -> np.ndarray:
        return prox_h(z, t, self)

    def scaled(self, c: float) -> "Regularizer":
        """Regularizer ``c * h`` (indicators are scale invariant)."""
        if self.kind == "l1":
            return Regularizer("l1", lam=self.lam * c)
        return self


def prox_h(z, t: float, reg: Regularizer) -> np.ndarray:
    """``argmin_x h(x) + ||x - z||^2 / (2t)``."""
    if not t > 0:
        raise ValueError(f"prox parameter must be positive, got {t}")
    z = np.asarray(z, dtype=float)
    if reg.kind == "l1":
        return np.sign(z) * np.maximum(np.abs(z) - t * reg.lam, 0.0)
    if reg.kind == "box":
        return np.clip(z, reg.lo, reg.hi)
    return z.copy()


# ---------------------------------------------------------------------------
# problem


@dataclass
class ProblemSpec:
    """Per-node losses sharing one regularizer.

    ``floors`` default to each loss's known lower bound; ``theta`` holds the
    strong-convexity modulus certified by the quadratic add-on (0 if none).
    """

    losses: Sequence
    reg: Regularizer = field(default_factory=Regularizer.zero)
    floors: Sequence[float] | None = None

    def __post_init__(self):
        if len(self.losses) == 0:
            raise ValueError("need at least one node")
        dims = {loss.dim for loss in self.losses}
        if len(dims) != 1:
            raise ValueError(f"losses disagree on dimension: {sorted(dims)}")
        if self.floors is None:
            self.floors = [loss.floor for loss in self.losses]
        if len(self.floors) != len(self.losses):
            raise ValueError("one floor per node required")

    @property
    def n(self) -> int:
        return len(self.losses)

    @property
    def d(self) -> int:
        return self.losses[0].dim

    @property
    def smoothness(self) -> np.ndarray:
        return np.array([loss.smoothness for loss in self.losses])

    @property
    def theta(self) -> np.ndarray:
        return np.array([getattr(loss, "strong_convexity", loss.theta) for loss in self.losses])

    def phi(self, i: int, x) -> float:
        return self.losses[i].value(x) + self.reg.value(x)

    def global_objective(self, x) -> float:
        """``sum_i phi_i(x)`` at a common point."""
        return sum(loss.value(x) for loss in self.losses) + self.n * self.reg.value(x)

    def stacked_value(self, X) -> float:
        """``sum_i phi_i(x_i)`` for stacked iterates ``X`` of shape (n, d)."""
        return sum(self.phi(i, X[i]) for i in range(self.n))

    def stacked_grad(self, X) -> np.ndarray:
        return np.stack([loss.grad(X[i]) for i, loss in enumerate(self.losses)])


def logistic_problem(shards: Sequence[Dataset], lam1: float = 0.0, theta: float = 0.0) -> ProblemSpec:
    reg = Regularizer.l1(lam1) if lam1 > 0 else Regularizer.zero()
    return ProblemSpec([LogisticLoss(s, theta) for s in shards], reg)


def random_quadratic_problem(n: int, d: int, rng, theta: float = 0.0, reg: Regularizer | None = None,
                             rows: int | None = None) -> ProblemSpec:
    """Least-squares node losses with random data; ``theta`` adds strong convexity."""
    rng = np.random.default_rng(rng)
    rows = rows or d
    losses = []
    for _ in range(n):
        M = rng.standard_normal((rows, d)) / np.sqrt(rows)
        y = rng.standard_normal(rows)
        losses.append(QuadraticLoss.least_squares(M, y, theta))
    return ProblemSpec(losses, reg or Regularizer.zero())


# ---------------------------------------------------------------------------
# ingestion and sampling


def _map_labels(raw: np.ndarray, label_map) -> np.ndarray:
    if label_map is None:
        vals = set(np.unique(raw).tolist())
        if vals <= {-1.0, 1.0}:
            return raw.astype(float)
        if vals <= {0.0, 1.0}:
            return np.where(raw > 0, 1.0, -1.0)
        raise ValueError(f"labels {sorted(vals)[:10]} are not binary; pass label_map")
    if callable(label_map):
        out = np.array([label_map(v) for v in raw], dtype=float)
    else:
        try:
            out = np.array([label_map[_label_key(v)] for v in raw], dtype=float)
        except KeyError as exc:
            raise ValueError(f"label {exc.args[0]} missing from label_map") from None
    if not np.all(np.abs(out) == 1.0):
        raise ValueError("label_map must produce -1 or +1")
    return out


def _label_key(v: float):
    return int(v) if float(v).is_integer() else v


def one_vs_rest(positive) -> Callable[[float], float]:
    """Label map sending ``positive`` to +1 and everything else to -1."""
    return lambda v: 1.0 if v == positive else -1.0


def load_libsvm(path, d: int | None = None, label_map: Mapping | Callable | None = None) -> Dataset:
    """Parse a LIBSVM text file (``label idx:val ...``, 1-based indices) densely."""
    labels, rows = [], []
    max_idx = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                labels.append(float(parts[0]))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: bad label {parts[0]!r}") from None
            row = {}
            for tok in parts[1:]:
                key, sep, val = tok.partition(":")
                if not sep:
                    raise ValueError(f"{path}:{lineno}: expected idx:val, got {tok!r}")
                try:
                    j = int(key)
                    v = float(val)
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: non-numeric entry {tok!r}") from None
                if j < 1:
                    raise ValueError(f"{path}:{lineno}: feature index must be >= 1, got {j}")
                row[j - 1] = v
                max_idx = max(max_idx, j)
            rows.append(row)
    if not rows:
        raise ValueError(f"{path}: no samples")
    if d is None:
        d = max_idx
    elif max_idx > d:
        raise ValueError(f"{path}: feature index {max_idx} exceeds dimension {d}")
    A = np.zeros((len(rows), d))
    for r, row in enumerate(rows):
        for j, v in row.items():
            A[r, j] = v
    return Dataset(A, _map_labels(np.array(labels), label_map))


def load_csv(path, label_map: Mapping | Callable | None = None) -> Dataset:
    """Read ``label,f1,...,fd`` with a header row."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[0].strip() != "label":
            raise ValueError(f"{path}: header must start with 'label'")
        data = [[float(v) for v in row] for row in reader if row]
    if not data:
        raise ValueError(f"{path}: no samples")
    arr = np.array(data)
    return Dataset(arr[:, 1:], _map_labels(arr[:, 0], label_map))


def load_dataset(path, format: str | None = None, label_map: Mapping | Callable | None = None,
                 d: int | None = None) -> Dataset:
    """Load LIBSVM or CSV data; the format defaults to the file suffix (``.csv`` or LIBSVM)."""
    path = Path(path)
    fmt = format or ("csv" if path.suffix.lower() == ".csv" else "libsvm")
    if fmt == "csv":
        return load_csv(path, label_map)
    if fmt == "libsvm":
        return load_libsvm(path, d, label_map)
    raise ValueError(f"unknown dataset format {fmt!r}")


def normalize_features(data: Dataset) -> Dataset:
    """Min-max scale every feature column to [0, 1] (constant columns become 0)."""
    lo = data.A.min(axis=0)
    span = data.A.max(axis=0) - lo
    span[span == 0] = 1.0
    return Dataset((data.A - lo) / span, data.b)


def subsample(data: Dataset, max_samples: int, seed) -> Dataset:
    if max_samples >= len(data):
        return data
    rng = np.random.default_rng(seed)
    return data.subset(np.sort(rng.choice(len(data), max_samples, replace=False)))


def partition_dataset(data: Dataset, n: int, seed) -> list[Dataset]:
    """Shuffle with ``seed`` and split into ``n`` shards whose sizes differ by at most one."""
    if n < 1:
        raise ValueError("need at least one shard")
    if n > len(data):
        raise ValueError(f"cannot split {len(data)} samples over {n} nodes")
    perm = np.random.default_rng(seed).permutation(len(data))
    return [data.subset(np.sort(part)) for part in np.array_split(perm, n)]


def sample_batch(n_samples: int, size: int, rng) -> np.ndarray:
    """Uniform batch of ``size`` distinct indices in ``range(n_samples)``, sorted.

    A full-size batch returns every index without drawing from ``rng``.
    """
    if not 1 <= size <= n_samples:
        raise ValueError(f"batch size {size} outside [1, {n_samples}]")
    if size == n_samples:
        return np.arange(n_samples)
    return np.sort(rng.choice(n_samples, size, replace=False))


def synthetic_classification(m: int, d: int, rng, noise: float = 0.1, binary_frac: float = 0.0) -> Dataset:
    """Linearly separable-ish binary data with features in [0, 1].

    ``binary_frac`` of the columns are one-hot style 0/1 indicators, roughly
    mimicking tabular data such as Covertype.
    """
    rng = np.random.default_rng(rng)
    n_bin = int(round(binary_frac * d))
    n_cont = d - n_bin
    A = np.empty((m, d))
    A[:, :n_cont] = rng.beta(2.0, 2.0, size=(m, n_cont))
    if n_bin:
        groups = max(1, n_bin // 10)
        cols = np.array_split(np.arange(n_cont, d), groups)
        A[:, n_cont:] = 0.0
        for c in cols:
            A[np.arange(m), rng.choice(c, size=m)] = 1.0
    w = rng.standard_normal(d)
    z = (A - A.mean(axis=0)) @ w
    z /= z.std() + 1e-12
    p = 1.0 / (1.0 + np.exp(-4.0 * z))
    b = np.where(rng.random(m) < (1 - noise) * p + noise / 2, 1.0, -1.0)
    return Dataset(A, b)
