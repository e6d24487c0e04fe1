from .commands import (
    cmd_backward,
    cmd_fixedpoint,
    cmd_forward,
    cmd_gradcheck,
    cmd_optimize,
    cmd_picard_study,
    dry_run,
)
from .scenario import Scenario, ScenarioError, load_scenario, parse_scenario

__all__ = [
    "Scenario",
    "ScenarioError",
    "cmd_backward",
    "cmd_fixedpoint",
    "cmd_forward",
    "cmd_gradcheck",
    "cmd_optimize",
    "cmd_picard_study",
    "dry_run",
    "load_scenario",
    "parse_scenario",
]
