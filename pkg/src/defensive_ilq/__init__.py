"""Adversarial-horizon ("defensive") N-player dynamic games solved by iterative LQ games."""

from .dynamics import BicycleModel, LinearDynamics, MultiPlayerDynamics, PlayerStateLayout, UnicycleModel
from .exceptions import (
    ConfigError,
    DimensionError,
    DivergenceError,
    GameError,
    IllConditionedGameError,
    NonFiniteError,
    RegularizationError,
    SingularLinearizationError,
)
from .geometry import LaneCenterline, distance_to_lane
from .ilq import GameProblem, GameSolution, OperatingPoint, SolverConfig, nash_residual, solve
from .lq_game import AffineStrategy, solve_lq_game, unilateral_best_response
from .scenarios import build_oncoming, build_scenario, build_three_player_intersection

__version__ = "0.1.0"

__all__ = [
    "AffineStrategy",
    "BicycleModel",
    "ConfigError",
    "DimensionError",
    "DivergenceError",
    "GameError",
    "GameProblem",
    "GameSolution",
    "IllConditionedGameError",
    "LaneCenterline",
    "LinearDynamics",
    "MultiPlayerDynamics",
    "NonFiniteError",
    "OperatingPoint",
    "PlayerStateLayout",
    "RegularizationError",
    "SingularLinearizationError",
    "SolverConfig",
    "UnicycleModel",
    "build_oncoming",
    "build_scenario",
    "build_three_player_intersection",
    "distance_to_lane",
    "nash_residual",
    "solve",
    "solve_lq_game",
    "unilateral_best_response",
]
