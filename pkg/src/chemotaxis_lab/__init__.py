"""Finite-volume simulator and estimate auditor for a regularized degenerate
Keller-Segel system with singular (logarithmic) sensitivity."""
from .config import ConfigError, RunConfig, load_config, parse_config
from .convergence import ConvergenceReport, critical_exponent_scan, eps_sweep, refinement_study
from .grid import Grid, State, build_grid
from .persistence import PersistenceError, load_trajectory, persist_trajectory
from .regularization import Params, d_eps, f_eps, f_eps_prime
from .stepper import RunResult, Simulation, StepError, Trajectory, run, step, step_w_form, w_form_gap
from .weak_residual import TestFunction, audit_trajectory, make_test_function, residual_u, residual_v

__all__ = [
    "ConfigError",
    "ConvergenceReport",
    "Grid",
    "Params",
    "PersistenceError",
    "RunConfig",
    "RunResult",
    "Simulation",
    "State",
    "StepError",
    "TestFunction",
    "Trajectory",
    "audit_trajectory",
    "build_grid",
    "critical_exponent_scan",
    "d_eps",
    "eps_sweep",
    "f_eps",
    "f_eps_prime",
    "load_config",
    "load_trajectory",
    "make_test_function",
    "parse_config",
    "persist_trajectory",
    "refinement_study",
    "residual_u",
    "residual_v",
    "run",
    "step",
    "step_w_form",
    "w_form_gap",
]

__version__ = "0.1.0"
