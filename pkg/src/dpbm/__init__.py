"""Decentralized proximal bundle methods with asynchronous and stochastic variants."""

from .algorithms import AlgoConfig, NodeState, fixed_step, compute_beta_k, prox_dgd_step
from .async_sim import (AsyncSchedule, Trace, run_simulation, run_threaded, schedule_partial,
                        schedule_total, verify_schedule)
from .bundle import BundleModel, Cut, model_value, model_subgradient
from .graph import Graph, build_topology, hat_weights, metropolis_weights, validate_averaging
from .metrics import (error_series, penalized_optimum, rate_envelope_check, reference_optimum)
from .problem import (Dataset, LogisticLoss, ProblemSpec, QuadraticLoss, Regularizer, load_libsvm,
                      logistic_grad, logistic_value, partition_dataset, prox_h, sample_batch)
from .subproblem import (SubproblemInstance, brute_force_primal, dual_objective, project_simplex,
                         recover_primal, solve_dual)

__version__ = "0.1.0"
