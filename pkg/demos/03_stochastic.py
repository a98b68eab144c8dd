"""
Mini-batch cuts on logistic regression
======================================

With sampled losses the cuts are only unbiased estimates, so the iterates
stop at a noise floor. Larger batches lower the floor, and a batch covering
the whole shard reproduces the exact method bit for bit.
"""

import numpy as np

from dpbm.algorithms import AlgoConfig
from dpbm.async_sim import run_simulation
from dpbm.graph import build_topology, metropolis_weights
from dpbm.metrics import error_series, reference_optimum
from dpbm.problem import Dataset, logistic_problem, partition_dataset

rng = np.random.default_rng(5)
A = rng.standard_normal((1800, 10))
w = rng.standard_normal(10)
b = np.where(rng.random(1800) < 1 / (1 + np.exp(-A @ w)), 1.0, -1.0)
prob = logistic_problem(partition_dataset(Dataset(A, b), 6, 0), lam1=1e-3)
f_star = reference_optimum(prob, tol=1e-10).value
print(f"f* = {f_star:.6f}")

graph = build_topology("ring", 6)
W = metropolis_weights(graph)


def plateau(batch, seed=0):
    cfg = AlgoConfig(alpha=1.0, policy="polyak", iterations=200, batch_size=batch)
    tr = run_simulation(prob, graph, W, cfg, seed=seed)
    return tr, error_series(tr.X[-50:], prob, f_star).mean()


exact, e_exact = plateau(0)
full, _ = plateau(300)
print("full batch identical to exact run:", exact.X.tobytes() == full.X.tobytes())

for batch in (10, 30, 100):
    errs = [plateau(batch, s)[1] for s in range(5)]
    print(f"batch {batch:4d}: mean plateau error {np.mean(errs):.2e}")
print(f"exact     : plateau error {e_exact:.2e}")
