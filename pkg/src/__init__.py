"""Sequential Action Control for linear evolution PDEs."""

from .models import ScenarioConfig, ClosedLoopResult, ConfigError, NumericalError
from .galerkin import build_mesh, assemble_operators
from .sac import SacController, run_receding_horizon
from .lqr import solve_care, lqr_gain
from .experiments import run_scenario, sweep, compare_sac_lqr, analyze_stability
from .config_file import parse_config, emit_config
from .views import ConsoleView
from .controller import ExperimentController

__all__ = [
    "ScenarioConfig",
    "ClosedLoopResult",
    "ConfigError",
    "NumericalError",
    "build_mesh",
    "assemble_operators",
    "SacController",
    "run_receding_horizon",
    "solve_care",
    "lqr_gain",
    "run_scenario",
    "sweep",
    "compare_sac_lqr",
    "analyze_stability",
    "parse_config",
    "emit_config",
    "ConsoleView",
    "ExperimentController",
]
