"""
Stale reads and idle nodes
==========================

The step size of each node depends only on its own smoothness and mixing
weight. The same steps therefore work under any delay pattern, and here we
check that idle rounds and stale neighbour values slow convergence without
breaking it.
"""

import numpy as np

from dpbm.algorithms import AlgoConfig
from dpbm.async_sim import run_simulation, schedule_partial, schedule_total
from dpbm.graph import build_topology, metropolis_weights
from dpbm.metrics import distance_series, penalized_optimum
from dpbm.problem import Regularizer, random_quadratic_problem

graph = build_topology("ring", 6)
W = metropolis_weights(graph)
prob = random_quadratic_problem(6, 5, 1, theta=1.0, reg=Regularizer.l1(0.1))
Xs = penalized_optimum(prob, W, 0.5, tol=1e-13).x
X0 = np.random.default_rng(0).standard_normal((6, 5))
cfg = AlgoConfig(alpha=0.5, policy="polyak_cutting_plane", M=5, iterations=400)

###############################################################################
# ``B`` bounds how long a node may stay idle and ``D`` bounds how stale a
# neighbour value may be.

print(" B   D   first k with error <= 1e-6   final error")
for B, D in ((0, 0), (0, 10), (3, 0), (3, 10)):
    sched = schedule_partial(graph, 400, B, D, seed=B * 10 + D)
    dist = distance_series(run_simulation(prob, graph, W, cfg, sched, x0=X0).X, Xs)
    k = int(np.argmax(dist <= 1e-6))
    print(f"{B:2d} {D:3d}   {k:27d}   {dist[-1]:.1e}")

###############################################################################
# Without any fixed bound the delays may grow like sqrt(k); the iterates
# still settle, only later.

total = schedule_total(graph, 4000, seed=0)
tr = run_simulation(prob, graph, W, AlgoConfig(alpha=0.5, policy="polyak_cutting_plane", M=5, iterations=4000),
                    total, x0=X0, stride=200)
print(f"total asynchrony: max delay {tr.max_delay}, final error {np.max(np.abs(tr.final - Xs)):.1e}")
