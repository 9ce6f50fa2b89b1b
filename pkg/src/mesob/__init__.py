"""Pareto-efficient equilibrium selection for tabular mean-field games."""

from .auction import AuctionGrid, WelfareParams, build_game_spec
from .game import (
    FlowTable,
    GameSpec,
    LinkDomainError,
    Policy,
    ShapeError,
    best_response,
    exploitability,
    policy_value,
    propagate_flow,
    retrieve_policy,
    social_value,
)
from .heuristic import BidDistribution, HeuristicConfig, heuristic_policy, run_heuristic
from .omo import MesobWeights, OmoIterate, SolverAbort, SolverConfig, evaluate_solution, solve
from .presets import PRESET_NAMES, get_preset

__all__ = [
    "AuctionGrid", "WelfareParams", "build_game_spec",
    "FlowTable", "GameSpec", "LinkDomainError", "Policy", "ShapeError",
    "best_response", "exploitability", "policy_value", "propagate_flow", "retrieve_policy", "social_value",
    "BidDistribution", "HeuristicConfig", "heuristic_policy", "run_heuristic",
    "MesobWeights", "OmoIterate", "SolverAbort", "SolverConfig", "evaluate_solution", "solve",
    "PRESET_NAMES", "get_preset",
]
