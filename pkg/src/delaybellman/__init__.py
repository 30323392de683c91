"""Bellman functionals, Lyapunov matrices and policy iteration for linear systems with state delay."""

from .errors import DimensionError, DivergenceError, GridError, UnstableError
from .sysmodel import (ClosedLoopSystem, ControlLaw, CostWeights, History, SystemModel, ThetaGrid, close_loop,
                       random_history)
from .ddesim import cauchy_solution, fundamental_matrix, integrate_closed_loop, is_exponentially_stable
from .lyapmat import lyap_property_residuals, lyapunov_matrix, lyapunov_samples
from .bellman import bellman_kernels, evaluate_functional, simulate_cost, weight_kernels
from .synthesis import policy_iteration, riccati_residuals
from .bounds import lower_bound_pipeline, upper_bound

__version__ = "0.1.0"
