"""Asynchronous execution: activation/delay schedules, a deterministic
tick-based simulator and a thread-per-node runtime.

Iterates are indexed by a shared tick ``k``. At tick ``k`` every active node
reads neighbor versions ``x_j^{s_ij^k}`` (``k - s_ij^k`` is the delay),
computes ``x_i^{k+1}`` from the pre-tick state, and inactive nodes carry
their iterate forward.
"""

from __future__ import annotations

import io
import json
import queue
import struct
import threading
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .algorithms import AlgoConfig, UpdateRecord, make_node, node_step
from .graph import Graph
from .problem import ProblemSpec


@dataclass
class AsyncSchedule:
    """Activation pattern and read indices over ``horizon`` ticks.

    ``active[k, i]`` says whether node ``i`` updates at tick ``k``;
    ``reads[k, i, j]`` is ``s_ij^k`` for neighbors ``j`` of active nodes and
    ``-1`` elsewhere.
    """

    n: int
    horizon: int
    neighbors: list
    active: np.ndarray
    reads: np.ndarray
    mode: str = "partial"
    B: int | None = None
    D: int | None = None
    growth: Callable[[int], int] | None = field(default=None, repr=False)

    def activations(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.active[:, i])

    def delays(self) -> np.ndarray:
        """All observed delays ``k - s_ij^k``."""
        k, i, j = np.nonzero(self.reads >= 0)
        return k - self.reads[k, i, j]


def sqrt_growth(k: int) -> int:
    return int(np.sqrt(k))


def _empty(n, K):
    return np.zeros((K, n), dtype=bool), np.full((K, n, n), -1, dtype=np.int64)


def synchronous_schedule(graph: Graph, K: int) -> AsyncSchedule:
    return schedule_partial(graph, K, 0, 0, seed=0)


def schedule_partial(graph: Graph, K: int, B: int, D: int, seed=None) -> AsyncSchedule:
    """Random schedule with every node active at least once in any ``B + 1``
    consecutive ticks and every read at most ``D`` ticks stale.

    Read indices never decrease for a fixed pair, as with a latest-wins
    buffer. ``B = D = 0`` gives the synchronous schedule.
    """
    if B < 0 or D < 0:
        raise ValueError("B and D must be nonnegative")
    rng = np.random.default_rng(seed)
    n, nbrs = graph.n, graph.neighbors
    active, reads = _empty(n, K)
    for i in range(n):
        t = int(rng.integers(0, B + 1))
        while t < K:
            active[t, i] = True
            t += int(rng.integers(1, B + 2))
    last = np.zeros((n, n), dtype=np.int64)
    for k in range(K):
        for i in np.flatnonzero(active[k]):
            for j in nbrs[i]:
                s = max(last[i, j], k - int(rng.integers(0, D + 1)))
                reads[k, i, j] = last[i, j] = s
    return AsyncSchedule(n, K, nbrs, active, reads, "partial", B, D)


def schedule_total(graph: Graph, K: int, seed=None, growth: Callable[[int], int] = sqrt_growth) -> AsyncSchedule:
    """Schedule whose activation gaps and delays may grow like ``growth(k)``.

    Reads satisfy ``s_ij^k >= k - growth(k)``, so with ``growth(k)/k -> 0``
    stale information is eventually purged. ``growth = 0`` is synchronous.
    """
    rng = np.random.default_rng(seed)
    n, nbrs = graph.n, graph.neighbors
    active, reads = _empty(n, K)
    for i in range(n):
        t = 0
        while t < K:
            active[t, i] = True
            t += 1 + int(rng.integers(0, growth(t) + 1))
    last = np.zeros((n, n), dtype=np.int64)
    for k in range(K):
        for i in np.flatnonzero(active[k]):
            for j in nbrs[i]:
                s = max(last[i, j], k - int(rng.integers(0, growth(k) + 1)))
                reads[k, i, j] = last[i, j] = s
    return AsyncSchedule(n, K, nbrs, active, reads, "total", growth=growth)


@dataclass
class ScheduleReport:
    ok: bool
    violations: list

    def __bool__(self):
        return self.ok

    @property
    def first(self):
        return self.violations[0] if self.violations else None


def verify_schedule(schedule: AsyncSchedule, B: int | None = None, D: int | None = None,
                    limit: int = 20) -> ScheduleReport:
    """Check activation windows, delay bounds and read monotonicity.

    ``B``/``D`` default to the schedule's own parameters; for a total
    schedule the delay envelope ``growth`` is checked instead.
    """
    B = schedule.B if B is None else B
    D = schedule.D if D is None else D
    out = []
    K, n = schedule.horizon, schedule.n
    act, reads = schedule.active, schedule.reads
    if B is not None:
        for i in range(n):
            for k in range(0, K - B):
                if not act[k:k + B + 1, i].any():
                    out.append(("inactive", i, k, f"node {i} idle on ticks {k}..{k + B}"))
                    break
    else:
        for i in range(n):
            if not act[:, i].any():
                out.append(("inactive", i, 0, f"node {i} never updates"))
    last = {}
    for k in range(K):
        for i in np.flatnonzero(act[k]):
            for j in schedule.neighbors[i]:
                s = int(reads[k, i, j])
                if s < 0 or s > k:
                    out.append(("read", (i, j, k), s, f"s_{i}{j}^{k} = {s} outside [0, {k}]"))
                    continue
                if D is not None and k - s > D:
                    out.append(("delay", (i, j, k), k - s, f"delay {k - s} > D={D} at (i={i}, j={j}, k={k})"))
                elif D is None and schedule.growth is not None and k - s > schedule.growth(k):
                    out.append(("delay", (i, j, k), k - s, f"delay {k - s} exceeds envelope at k={k}"))
                if s < last.get((i, j), -1):
                    out.append(("order", (i, j, k), s, f"read index decreased for ({i}, {j}) at k={k}"))
                last[(i, j)] = s
            if len(out) >= limit:
                return ScheduleReport(False, out)
    return ScheduleReport(not out, out)


# ---------------------------------------------------------------------------
# trace


@dataclass
class Trace:
    """Iterate history and per-update log of one run."""

    X: np.ndarray
    ticks: np.ndarray
    log: list = field(default_factory=list)
    seed: int | None = None
    config: dict = field(default_factory=dict)
    max_delay: int = 0

    @property
    def final(self) -> np.ndarray:
        return self.X[-1]

    def averages(self) -> np.ndarray:
        return self.X.mean(axis=1)

    def to_bytes(self) -> bytes:
        return dump_trace(self)

    def __eq__(self, other):
        return isinstance(other, Trace) and self.to_bytes() == other.to_bytes()


def run_simulation(problem: ProblemSpec, graph: Graph, W, config: AlgoConfig, schedule: AsyncSchedule | None = None,
                   seed: int = 0, x0=None, stride: int = 1, callback=None) -> Trace:
    """Run ``config.iterations`` ticks under ``schedule`` (synchronous if omitted).

    Deterministic in ``(problem, config, schedule, seed)``. ``callback(k, X)``
    is called after every tick with the post-tick iterates.
    """
    n, d, K = problem.n, problem.d, config.iterations
    if graph.n != n:
        raise ValueError(f"graph has {graph.n} nodes, problem has {n}")
    if schedule is None:
        schedule = synchronous_schedule(graph, K)
    if schedule.horizon < K:
        raise ValueError(f"schedule horizon {schedule.horizon} shorter than {K} iterations")
    X0 = np.zeros((n, d)) if x0 is None else np.array(np.broadcast_to(x0, (n, d)), dtype=float)
    streams = np.random.default_rng(seed).spawn(n)
    nbrs = graph.neighbors
    nodes = [make_node(i, X0[i], W, nbrs[i], problem, config, streams[i]) for i in range(n)]
    for node in nodes:
        for j in node.neighbors:
            node.receive(j, X0[j], 0)

    history = [X0]
    snaps, ticks = [X0.copy()], [0]
    log, max_delay = [], 0
    for k in range(K):
        X = history[k]
        new = {}
        for i in np.flatnonzero(schedule.active[k]):
            node = nodes[i]
            for j in node.neighbors:
                s = int(schedule.reads[k, i, j])
                node.receive(j, history[s][j], s)
                max_delay = max(max_delay, k - node.tags[j])
            log.append(node_step(node, problem, config, k))
            new[i] = node.x
        Xn = X.copy()
        for i, xi in new.items():
            Xn[i] = xi
        history.append(Xn)
        if (k + 1) % stride == 0 or k + 1 == K:
            snaps.append(Xn.copy())
            ticks.append(k + 1)
        if callback is not None:
            callback(k, Xn)
    cfg = asdict(config)
    return Trace(np.array(snaps), np.array(ticks), log, seed, cfg, max_delay)


# ---------------------------------------------------------------------------
# threaded runtime


def run_threaded(problem: ProblemSpec, graph: Graph, W, config: AlgoConfig, wall_budget: float = 5.0,
                 max_updates: int | None = None, seed: int = 0, x0=None) -> Trace:
    """One worker thread per node exchanging iterates through inboxes.

    Workers loop receive -> update -> broadcast until ``wall_budget``
    seconds elapse or they have made ``max_updates`` updates. Only the latest
    message per neighbor is kept. Interleaving depends on the OS scheduler,
    so results are not reproducible; ``Trace.max_delay`` reports the largest
    observed staleness in the senders' update counts.
    """
    n, d = problem.n, problem.d
    X0 = np.zeros((n, d)) if x0 is None else np.array(np.broadcast_to(x0, (n, d)), dtype=float)
    streams = np.random.default_rng(seed).spawn(n)
    nbrs = graph.neighbors
    nodes = [make_node(i, X0[i], W, nbrs[i], problem, config, streams[i]) for i in range(n)]
    inboxes = [queue.Queue() for _ in range(n)]
    for node in nodes:
        for j in node.neighbors:
            node.receive(j, X0[j], 0)
    events = [[] for _ in range(n)]
    logs = [[] for _ in range(n)]
    delays = [0] * n
    stop = threading.Event()
    errors = []
    t0 = time.perf_counter()
    cap = max_updates if max_updates is not None else config.iterations

    def worker(i):
        node = nodes[i]
        version = 0
        try:
            while not stop.is_set() and version < cap:
                if time.perf_counter() - t0 > wall_budget:
                    break
                while True:
                    try:
                        j, ver, xj = inboxes[i].get_nowait()
                    except queue.Empty:
                        break
                    node.receive(j, xj, ver)
                rec = node_step(node, problem, config, version)
                version += 1
                logs[i].append(rec)
                events[i].append((time.perf_counter(), version, node.x.copy()))
                for j in node.neighbors:
                    inboxes[j].put((i, version, node.x.copy()))
                for j in node.neighbors:
                    lag = version_of[j] - node.tags[j]
                    delays[i] = max(delays[i], lag)
                version_of[i] = version
                time.sleep(0)
        except Exception as exc:  # surfaced to the caller below
            errors.append((i, exc))
            stop.set()

    version_of = [0] * n
    threads = [threading.Thread(target=worker, args=(i,), daemon=True) for i in range(n)]
    for t in threads:
        t.start()
    for t in threads:
        t.join(wall_budget + 60.0)
    stop.set()
    if errors:
        i, exc = errors[0]
        raise RuntimeError(f"worker {i} failed: {exc}") from exc

    # merge per-node event streams into global snapshots, one per update
    merged = sorted((ts, i, x) for i in range(n) for ts, _, x in events[i])
    X = X0.copy()
    snaps = [X0.copy()]
    for _, i, x in merged:
        X = X.copy()
        X[i] = x
        snaps.append(X)
    log = [r for lg in logs for r in lg]
    return Trace(np.array(snaps), np.arange(len(snaps)), log, seed, asdict(config), max(delays))


# ---------------------------------------------------------------------------
# serialization

_MAGIC = b"DPBMTRC\0"
_VERSION = 1


def dump_trace(trace: Trace) -> bytes:
    """Binary snapshot: magic, version, JSON metadata, then little-endian doubles."""
    meta = {
        "seed": trace.seed,
        "config": trace.config,
        "max_delay": int(trace.max_delay),
        "log": [asdict(r) for r in trace.log],
    }
    blob = json.dumps(meta, sort_keys=True).encode()
    S, n, d = trace.X.shape
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<HIIII", _VERSION, S, n, d, len(blob)))
    buf.write(blob)
    buf.write(np.asarray(trace.ticks, dtype="<i8").tobytes())
    buf.write(np.asarray(trace.X, dtype="<f8").tobytes())
    return buf.getvalue()


def load_trace(data: bytes) -> Trace:
    if data[:8] != _MAGIC:
        raise ValueError("not a trace snapshot")
    version, S, n, d, mlen = struct.unpack_from("<HIIII", data, 8)
    if version != _VERSION:
        raise ValueError(f"unsupported trace version {version}")
    off = 8 + struct.calcsize("<HIIII")
    meta = json.loads(data[off:off + mlen])
    off += mlen
    ticks = np.frombuffer(data, dtype="<i8", count=S, offset=off).copy()
    off += 8 * S
    X = np.frombuffer(data, dtype="<f8", count=S * n * d, offset=off).reshape(S, n, d).copy()
    log = [UpdateRecord(**r) for r in meta["log"]]
    return Trace(X, ticks, log, meta["seed"], meta["config"], meta["max_delay"])


def save_trace(trace: Trace, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dump_trace(trace))


def read_trace(path) -> Trace:
    with open(path, "rb") as fh:
        return load_trace(fh.read())
