"""Stagewise Newton and DDP solvers for N-player finite-horizon dynamic games."""

from .backward import AffinePolicy, RegularizationLog, StageGameError, ddp_backward, newton_backward, regularize
from .derivatives import (
    StageDerivatives,
    SupplierError,
    TerminalDerivatives,
    differentiate_stage,
    differentiate_terminal,
    differentiate_trajectory,
    eval_quadratic_dynamics,
    fd_stage_oracle,
    fd_terminal_oracle,
)
from .model import (
    DimensionError,
    GameProblem,
    NonFiniteStateError,
    PlayerCosts,
    Trajectory,
    rollout,
    total_cost,
    validate,
)
from .problems import CATALOG, build, owner_dog, planar_robots, random_lq_game, random_smooth_game
from .solver import SolveOptions, SolveReport, solve, stationarity_residual

__all__ = [
    "AffinePolicy",
    "CATALOG",
    "DimensionError",
    "GameProblem",
    "NonFiniteStateError",
    "PlayerCosts",
    "RegularizationLog",
    "SolveOptions",
    "SolveReport",
    "StageDerivatives",
    "StageGameError",
    "SupplierError",
    "TerminalDerivatives",
    "Trajectory",
    "build",
    "ddp_backward",
    "differentiate_stage",
    "differentiate_terminal",
    "differentiate_trajectory",
    "eval_quadratic_dynamics",
    "fd_stage_oracle",
    "fd_terminal_oracle",
    "newton_backward",
    "owner_dog",
    "planar_robots",
    "random_lq_game",
    "random_smooth_game",
    "regularize",
    "rollout",
    "solve",
    "stationarity_residual",
    "total_cost",
    "validate",
]
