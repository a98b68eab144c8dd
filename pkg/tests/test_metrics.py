import csv
import json

import numpy as np
import pytest

from dpbm.algorithms import AlgoConfig
from dpbm.async_sim import run_simulation
from dpbm.graph import build_topology, metropolis_weights
from dpbm.metrics import (EnvelopeReport, block_max_sq, consensus_error, contraction_factor, error_series,
                          penalized_optimum, penalty, prox_dgd_residual, rate_envelope_check,
                          reference_optimum, trace_rows, write_metrics_csv, write_summary)
from dpbm.problem import (Dataset, LogisticLoss, ProblemSpec, QuadraticLoss, Regularizer,
                          random_quadratic_problem)


def test_reference_optimum_shifted_square():
    c = np.array([1.0, -2.0, 0.5])
    prob = ProblemSpec([QuadraticLoss(np.eye(3), -c, 0.5 * c @ c)])
    ref = reference_optimum(prob)
    assert ref.value == pytest.approx(0.0, abs=1e-15)
    np.testing.assert_allclose(ref.x, c, atol=1e-10)


def test_reference_optimum_one_d_lasso():
    prob = ProblemSpec([QuadraticLoss([[1.0]], [-1.0], 0.5)], Regularizer.l1(1.0))
    ref = reference_optimum(prob)
    assert ref.x[0] == pytest.approx(0.0, abs=1e-12)
    assert ref.value == pytest.approx(0.5, abs=1e-12)


def test_reference_optimum_logistic_toy():
    A = np.array([[1.0, 0.5], [-0.3, 1.2], [0.8, -1.0], [-1.5, -0.2]])
    data = Dataset(A, np.array([1.0, 1.0, -1.0, -1.0]))
    prob = ProblemSpec([LogisticLoss(data)], Regularizer.l1(0.05))
    ref = reference_optimum(prob, tol=1e-12)
    # frozen from a 10^6-step diminishing-step subgradient oracle
    assert ref.value == pytest.approx(0.28303241712617, abs=1e-8)
    assert ref.residual <= 1e-12


def _quad_consensus(n=5, d=3, seed=0):
    prob = random_quadratic_problem(n, d, seed, theta=0.3)
    g = build_topology("ring", n)
    return prob, metropolis_weights(g)


def test_penalized_optimum_linear_solve():
    prob, W = _quad_consensus()
    alpha = 0.8
    n, d = prob.n, prob.d
    # stationarity: blockdiag(P_i) x + q + (I - W) x / alpha = 0
    K = np.zeros((n * d, n * d))
    rhs = np.zeros(n * d)
    for i, loss in enumerate(prob.losses):
        K[i * d:(i + 1) * d, i * d:(i + 1) * d] = loss.P
        rhs[i * d:(i + 1) * d] = -loss.q
    K += np.kron(np.eye(n) - W, np.eye(d)) / alpha
    x = np.linalg.solve(K, rhs).reshape(n, d)
    ref = penalized_optimum(prob, W, alpha, tol=1e-12)
    np.testing.assert_allclose(ref.x, x, atol=1e-10)
    assert prox_dgd_residual(prob, ref.x, W, alpha) <= 1e-12


def test_penalized_optimum_identical_nodes():
    rng = np.random.default_rng(1)
    loss = QuadraticLoss.least_squares(rng.standard_normal((4, 3)), rng.standard_normal(4))
    prob = ProblemSpec([loss] * 4, Regularizer.l1(0.1))
    W = metropolis_weights(build_topology("ring", 4))
    ref = penalized_optimum(prob, W, 2.0, tol=1e-12)
    central = reference_optimum(prob, tol=1e-12).x
    for i in range(4):
        np.testing.assert_allclose(ref.x[i], central, atol=1e-9)


def test_disagreement_shrinks_with_alpha():
    prob, W = _quad_consensus(seed=2)
    spread = [consensus_error(penalized_optimum(prob, W, a, tol=1e-11).x) for a in (10.0, 1.0, 0.1)]
    assert spread[0] > spread[1] > spread[2]


def test_error_series_hand_values():
    # f_1 = (x - 1)^2 / 2, f_2 = (x + 1)^2 / 2, f* = 1 at x = 0
    prob = ProblemSpec([QuadraticLoss([[1.0]], [-1.0], 0.5), QuadraticLoss([[1.0]], [1.0], 0.5)])
    hist = np.array([[[0.0], [0.0]], [[1.0], [3.0]], [[-1.0], [0.0]]])
    np.testing.assert_allclose(error_series(hist, prob, 1.0), [0.0, 4.0, 0.25])


def test_rate_envelope_examples():
    Xs = np.zeros((2, 1))
    hist = np.array([[[1.0], [0.5]], [[0.6], [0.2]], [[0.3], [0.1]]])
    assert rate_envelope_check(hist, Xs, rho=0.5, window=1).ok
    # rho = 1: plain nonincrease of the block maximum
    assert rate_envelope_check(hist, Xs, rho=1.0, window=1).ok
    bad = hist.copy()
    bad[2, 1] = 0.9
    rep = rate_envelope_check(bad, Xs, rho=0.5, window=1)
    assert isinstance(rep, EnvelopeReport) and not rep
    assert rep.violation[:2] == (2, 1)


def test_synchronous_run_meets_envelope():
    prob = random_quadratic_problem(6, 5, 1, theta=1.0, reg=Regularizer.l1(0.1))
    g = build_topology("ring", 6)
    W = metropolis_weights(g)
    alpha = 0.5
    Xs = penalized_optimum(prob, W, alpha, tol=1e-13).x
    cfg = AlgoConfig(alpha=alpha, policy="polyak_cutting_plane", M=5, iterations=120)
    tr = run_simulation(prob, g, W, cfg, x0=np.random.default_rng(0).standard_normal((6, 5)))
    gam = np.array([r.gamma for r in tr.log[:6]])
    rho = contraction_factor(gam, prob.theta)
    assert rate_envelope_check(tr.X, Xs, rho, 1).ok


def test_small_helpers():
    X = np.array([[1.0, 0.0], [0.0, 1.0]])
    W = np.full((2, 2), 0.5)
    assert penalty(X, W, 1.0) == pytest.approx(0.5)
    assert block_max_sq(X, np.zeros((2, 2))) == 1.0
    assert contraction_factor([1.0, 2.0], [0.5, 0.5]) == pytest.approx(1 / 1.5)
    assert consensus_error(np.ones((3, 2))) == 0.0


def test_csv_and_summary(tmp_path):
    prob, W = _quad_consensus()
    g = build_topology("ring", 5)
    tr = run_simulation(prob, g, W, AlgoConfig(alpha=0.5, iterations=4, M=2))
    ref = reference_optimum(prob)
    p = tmp_path / "m.csv"
    write_metrics_csv(p, trace_rows(tr, prob, ref.value, penalized_optimum(prob, W, 0.5).x))
    with open(p, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert set(rows[0]) == {"iter", "node", "metric", "value"}
    metrics = {r["metric"] for r in rows}
    assert {"train_error", "consensus_error", "dist_to_penalized_opt", "gamma", "attempts"} <= metrics
    first = next(r for r in rows if r["metric"] == "train_error")
    assert float(first["value"]) == pytest.approx(prob.global_objective(np.zeros(3)) - ref.value)
    s = tmp_path / "s.json"
    write_summary(s, {"f_star": np.float64(ref.value), "ok": True})
    assert json.loads(s.read_text())["f_star"] == pytest.approx(ref.value)
