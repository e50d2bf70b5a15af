"""Neural ODEs and universal differential equations for Lotka-Volterra dynamics."""

from .dynamics import DomainError, LvParams, Trajectory, add_noise, generate_truth, lv_invariant, lv_rhs
from .estimators import NeuralODERegressor, UDERegressor
from .models import neural_ode, recovered_interaction, rollout, ude
from .optim import default_schedule, run_schedule
from .solvers import IntegrationError, ToleranceSpec, rk4_fixed, tsit5_adaptive

__version__ = "0.1.0"

__all__ = [
    "DomainError", "IntegrationError", "LvParams", "NeuralODERegressor", "ToleranceSpec", "Trajectory",
    "UDERegressor", "add_noise", "default_schedule", "generate_truth", "lv_invariant", "lv_rhs", "neural_ode",
    "recovered_interaction", "rk4_fixed", "rollout", "run_schedule", "tsit5_adaptive", "ude",
]
