import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dpbm.algorithms import AlgoConfig, prox_dgd_step
from dpbm.async_sim import (dump_trace, load_trace, read_trace, run_simulation, run_threaded, save_trace,
                            schedule_partial, schedule_total, synchronous_schedule, verify_schedule)
from dpbm.graph import build_topology, metropolis_weights, single_node
from dpbm.metrics import penalized_optimum, window_lyapunov
from dpbm.problem import Regularizer, random_quadratic_problem
from dpbm.verify import suite_schedule

RING = build_topology("ring", 6)


# schedules ----------------------------------------------------------------

def test_zero_bounds_give_synchronous_schedule():
    sch = schedule_partial(RING, 50, 0, 0, seed=3)
    assert sch.active.all()
    for k in range(50):
        for i in range(6):
            for j in RING.neighbors[i]:
                assert sch.reads[k, i, j] == k


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 6), st.integers(0, 25), st.integers(0, 10**6))
def test_partial_schedule_properties(B, D, seed):
    sch = schedule_partial(RING, 200, B, D, seed=seed)
    for i in range(6):
        for k in range(200 - B):
            assert sch.active[k:k + B + 1, i].any()
    assert sch.delays().max(initial=0) <= D
    assert verify_schedule(sch).ok


def test_total_schedule_examples():
    sync = schedule_total(RING, 60, seed=0, growth=lambda k: 0)
    assert sync.active.all()
    assert np.all(sync.delays() == 0)
    sch = schedule_total(RING, 3000, seed=1)
    k, i, j = np.nonzero(sch.reads >= 0)
    at100 = k == 100
    assert np.all(100 - sch.reads[k[at100], i[at100], j[at100]] <= 10)
    assert np.all(k - sch.reads[k, i, j] <= np.floor(np.sqrt(k)))
    # the smallest read index after K' keeps growing with K'
    mins = [sch.reads[k[k >= Kp], i[k >= Kp], j[k >= Kp]].min() for Kp in (100, 500, 1000, 2000, 2900)]
    assert all(a < b for a, b in zip(mins, mins[1:]))
    assert mins[-1] >= 2900 - np.sqrt(3000)
    assert verify_schedule(sch).ok


def test_reads_are_monotone():
    for sch in (schedule_partial(RING, 300, 3, 7, seed=2), schedule_total(RING, 300, seed=2)):
        for i in range(6):
            for j in RING.neighbors[i]:
                s = sch.reads[sch.activations(i), i, j]
                assert np.all(np.diff(s) >= 0)


def test_verify_schedule_counterexamples():
    sch = schedule_partial(RING, 40, 2, 3, seed=0)
    silent = schedule_partial(RING, 40, 2, 3, seed=0)
    silent.active[10:14, 4] = False
    rep = verify_schedule(silent)
    assert not rep.ok and rep.first[0] == "inactive" and rep.first[1] == 4
    assert verify_schedule(sch).ok
    stale = schedule_partial(RING, 40, 0, 3, seed=0)
    stale.reads[30:, 2, 3] = np.minimum(stale.reads[30:, 2, 3], 26)
    rep = verify_schedule(stale)
    assert not rep.ok
    kind, where, delay, _ = rep.first
    assert kind == "delay" and where == (2, 3, 30) and delay == 4


def test_verify_schedule_flags_decreasing_reads():
    sch = schedule_partial(RING, 20, 0, 0, seed=0)
    sch.reads[10, 0, 1] = 8
    sch.reads[11, 0, 1] = 7
    kinds = {v[0] for v in verify_schedule(sch, D=5).violations}
    assert "order" in kinds


def test_schedule_suite():
    assert suite_schedule(seed=4).passed


# simulator ----------------------------------------------------------------

def _quad(n=6, seed=1, theta=0.5):
    return random_quadratic_problem(n, 4, seed, theta=theta, reg=Regularizer.l1(0.05))


def test_synchronous_prox_dgd_matches_matrix_form():
    W = metropolis_weights(RING)
    prob = _quad()
    cfg = AlgoConfig(alpha=0.3, method="prox_dgd", iterations=80)
    X0 = np.random.default_rng(0).standard_normal((6, 4))
    tr = run_simulation(prob, RING, W, cfg, schedule_partial(RING, 80, 0, 0), x0=X0)
    X = X0
    for k in range(80):
        X = prox_dgd_step(X, W, 0.3, prob)
        np.testing.assert_allclose(tr.X[k + 1], X, atol=1e-12, rtol=0)


def test_single_node_runs_centralized():
    prob = _quad(n=1)
    tr = run_simulation(prob, single_node(), np.ones((1, 1)), AlgoConfig(alpha=1.0, iterations=40, M=4))
    assert tr.X.shape == (41, 1, 4)
    assert prob.global_objective(tr.final[0]) < prob.global_objective(np.zeros(4))


def test_simulation_is_deterministic():
    W = metropolis_weights(RING)
    prob = _quad()
    cfg = AlgoConfig(alpha=0.5, policy="polyak_cutting_plane", M=5, iterations=60)
    sch = schedule_partial(RING, 60, 2, 4, seed=9)
    a = run_simulation(prob, RING, W, cfg, sch, seed=5)
    b = run_simulation(prob, RING, W, cfg, sch, seed=5)
    assert a.to_bytes() == b.to_bytes()


def test_inactive_nodes_carry_iterates():
    W = metropolis_weights(RING)
    prob = _quad()
    sch = schedule_partial(RING, 30, 3, 2, seed=1)
    tr = run_simulation(prob, RING, W, AlgoConfig(alpha=0.5, iterations=30, M=3), sch)
    for k in range(30):
        idle = ~sch.active[k]
        np.testing.assert_array_equal(tr.X[k + 1][idle], tr.X[k][idle])
    assert tr.max_delay <= 2


def test_window_lyapunov_monotone_under_partial_asynchrony():
    W = metropolis_weights(RING)
    prob = random_quadratic_problem(6, 5, 1, theta=0.0, reg=Regularizer.l1(0.1))
    Xs = penalized_optimum(prob, W, 0.5, tol=1e-13).x
    X0 = np.random.default_rng(0).standard_normal((6, 5))
    for B, D in ((0, 0), (3, 0), (0, 5), (3, 5)):
        cfg = AlgoConfig(alpha=0.5, policy="polyak_cutting_plane", M=5, iterations=150)
        tr = run_simulation(prob, RING, W, cfg, schedule_partial(RING, 150, B, D, seed=10 * B + D), x0=X0)
        V = window_lyapunov(tr.X, Xs, B + D + 1)
        assert np.all(np.diff(V) <= 1e-10)


def test_short_schedule_rejected():
    with pytest.raises(ValueError):
        run_simulation(_quad(), RING, metropolis_weights(RING), AlgoConfig(iterations=10),
                       synchronous_schedule(RING, 5))


# serialization ------------------------------------------------------------

def test_trace_round_trip(tmp_path):
    W = metropolis_weights(RING)
    tr = run_simulation(_quad(), RING, W, AlgoConfig(alpha=0.5, iterations=12, M=2), stride=5)
    assert list(tr.ticks) == [0, 5, 10, 12]
    back = load_trace(dump_trace(tr))
    assert back == tr and np.array_equal(back.X, tr.X)
    p = tmp_path / "t.bin"
    save_trace(tr, p)
    assert read_trace(p).to_bytes() == tr.to_bytes()
    raw = p.read_bytes()
    assert raw[:8] == b"DPBMTRC\0"
    with pytest.raises(ValueError):
        load_trace(b"garbage!" + raw[8:])
    with pytest.raises(ValueError, match="version"):
        load_trace(raw[:8] + (99).to_bytes(2, "little") + raw[10:])


# threaded runtime ---------------------------------------------------------

def test_threaded_single_worker_matches_simulator():
    prob = _quad(n=1)
    cfg = AlgoConfig(alpha=1.0, iterations=25, M=3)
    sim = run_simulation(prob, single_node(), np.ones((1, 1)), cfg)
    thr = run_threaded(prob, single_node(), np.ones((1, 1)), cfg, wall_budget=30.0)
    np.testing.assert_allclose(thr.final, sim.final, atol=1e-14)


def test_threaded_reaches_penalized_optimum():
    W = metropolis_weights(RING)
    prob = random_quadratic_problem(6, 5, 1, theta=1.0, reg=Regularizer.l1(0.1))
    Xs = penalized_optimum(prob, W, 0.5, tol=1e-13).x
    cfg = AlgoConfig(alpha=0.5, policy="polyak_cutting_plane", M=5, iterations=400)
    tr = run_threaded(prob, RING, W, cfg, wall_budget=30.0)
    assert 0 <= tr.max_delay < np.inf
    assert np.max(np.abs(tr.final - Xs)) <= 1e-4
