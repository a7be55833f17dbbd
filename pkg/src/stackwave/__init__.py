"""Leader/follower boundary control of the wave equation on a linearly expanding interval."""

from .domain import (
    ControlSplit,
    Discretization,
    DomainError,
    Grid,
    ProblemConfig,
    SplitMode,
    min_control_time,
)
from .leader import DualVariable, LeaderOperator, LeaderSolution, TargetSpec, solve_leader
from .nash import FollowerProblem, NashSolution, solve_follower, solve_optimality_system
from .wavesolver import SpaceTimeField, TerminalPair, TimeSignal, solve_backward_adjoint, solve_forward

__all__ = [
    "ControlSplit",
    "Discretization",
    "DomainError",
    "DualVariable",
    "FollowerProblem",
    "Grid",
    "LeaderOperator",
    "LeaderSolution",
    "NashSolution",
    "ProblemConfig",
    "SpaceTimeField",
    "SplitMode",
    "TargetSpec",
    "TerminalPair",
    "TimeSignal",
    "min_control_time",
    "solve_backward_adjoint",
    "solve_follower",
    "solve_forward",
    "solve_leader",
    "solve_optimality_system",
]
