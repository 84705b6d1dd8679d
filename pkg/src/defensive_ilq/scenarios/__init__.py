from .config import SCENARIO_NAMES, dump_config, load_config, load_named, problem_to_config, validate_config
from .build import (
    build_game,
    build_oncoming,
    build_three_player_intersection,
    build_scenario,
    describe_problem,
    validate_problem,
)

__all__ = [
    "SCENARIO_NAMES",
    "build_game",
    "build_oncoming",
    "build_scenario",
    "build_three_player_intersection",
    "describe_problem",
    "dump_config",
    "load_config",
    "load_named",
    "problem_to_config",
    "validate_config",
    "validate_problem",
]
