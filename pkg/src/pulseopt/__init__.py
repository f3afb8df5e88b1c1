"""Gaussian pulse-sequence design for population transfer in dissipative level chains."""

from .autodiff import GradientReport, grad_dual, grad_fd
from .errors import ConfigError, IntegrationError, NumericalError, PulseOptError
from .io import ProblemConfig, load_config, load_fixture
from .loss import LossConfig, OrderingConstraint, Problem, total_loss
from .model import SystemSpec, build_hamiltonian, lindblad_rhs
from .ode import DensityState, IntegratorConfig, Trajectory, integrate
from .optim import OptimConfig, OptimReport, minimize, multistart
from .pulses import BoundsSpec, PulseParams, PulseSet, default_bounds

__version__ = "0.1.0"

__all__ = [
    "BoundsSpec",
    "ConfigError",
    "DensityState",
    "GradientReport",
    "IntegrationError",
    "IntegratorConfig",
    "LossConfig",
    "NumericalError",
    "OptimConfig",
    "OptimReport",
    "OrderingConstraint",
    "Problem",
    "ProblemConfig",
    "PulseOptError",
    "PulseParams",
    "PulseSet",
    "SystemSpec",
    "build_hamiltonian",
    "default_bounds",
    "grad_dual",
    "grad_fd",
    "integrate",
    "lindblad_rhs",
    "load_config",
    "load_fixture",
    "minimize",
    "multistart",
    "total_loss",
]
