"""Wasserstein-2 transport maps from dual potentials with amortized, fine-tuned conjugates."""

from .amortization import loss_cycle, loss_objective, loss_regression
from .conjugate import SolverConfig, benchmark_mode, conjugate, synthetic_mode
from .evaluation import grid_conjugate_oracle, l2_uvp, landscape_export
from .linesearch import LineSearchConfig, line_search
from .measures import Sampler, TaskSpec, get_task, task_names
from .potentials import AmortModel, QuadraticPotential, icnn, init_nn, mlp_potential
from .trainer import TrainConfig, dual_grad, dual_value, train

__version__ = "0.1.0"

__all__ = [
    "AmortModel", "LineSearchConfig", "QuadraticPotential", "Sampler", "SolverConfig",
    "TaskSpec", "TrainConfig", "benchmark_mode", "conjugate", "dual_grad", "dual_value",
    "get_task", "grid_conjugate_oracle", "icnn", "init_nn", "l2_uvp", "landscape_export",
    "line_search", "loss_cycle", "loss_objective", "loss_regression", "mlp_potential",
    "synthetic_mode", "task_names", "train",
]
