"""Random periodic solutions of periodically forced semilinear SDEs with linear multiplicative noise."""

from .cocycle import Dichotomy, LinearModel, build_dichotomy, phi, phi_truncated, temperedness_stat
from .errors import (ConfigError, MaxIterExceeded, NonCommutative, NonCommutativeMixedSpectrum, NonFinite,
                     NotHyperbolic, RPSolveError, VerificationFailed)
from .estimator import RandomPeriodicSolver
from .ihrie import GridFunction, SolveReport, SolverConfig, solve_fixed_point, solver_path
from .integrate import heun_stratonovich, semiflow
from .models import PeriodicField, AdditiveNoise, builtin_field, builtin_noise
from .paths import BrownianPath, TimeGrid, sample_path, shift
from .scenarios import BUILTIN, Scenario, build_scenario

__all__ = [
    "AdditiveNoise", "BUILTIN", "BrownianPath", "ConfigError", "Dichotomy", "GridFunction", "LinearModel",
    "MaxIterExceeded", "NonCommutative", "NonCommutativeMixedSpectrum", "NonFinite", "NotHyperbolic",
    "PeriodicField", "RPSolveError", "RandomPeriodicSolver", "Scenario", "SolveReport", "SolverConfig", "TimeGrid",
    "VerificationFailed", "build_dichotomy", "build_scenario", "builtin_field", "builtin_noise",
    "heun_stratonovich", "phi", "phi_truncated", "sample_path", "semiflow", "shift", "solve_fixed_point",
    "solver_path", "temperedness_stat",
]
