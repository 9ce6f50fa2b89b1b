"""Named game and experiment presets."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .auction import AuctionGrid, WelfareParams, build_game_spec
from .game import GameSpec
from .games import single_point_game
from .heuristic import BidDistribution, HeuristicConfig, discretized_normal
from .omo import MesobWeights, SolverConfig


@dataclass(frozen=True)
class Preset:
    name: str
    spec: GameSpec
    grid: AuctionGrid | None
    solver: SolverConfig
    heuristic: HeuristicConfig | None = None
    alpha0: BidDistribution | None = None
    weights: MesobWeights = field(default_factory=lambda: MesobWeights(0.5, 0.5))


# Accelerated PGD with a unit starting step reaches an approximate
# equilibrium on the sec3 grid within the 1500-iteration budget.
AUCTION_SOLVER = SolverConfig(step_size=1.0, max_iters=1500, accelerate=True)

# Distribution parameters are (mean, variance).
APPB_CTR_NORMAL = (0.2, 0.09)
APPB_BID_NORMAL = (1.5, 1.44)


def sec3_grid() -> AuctionGrid:
    ctr = np.array([0.2, 0.4, 0.6])
    return AuctionGrid(ctr, np.array([0.0, 1.25, 2.5, 3.75, 5.0]), 5, 2.0, np.full(3, 1 / 3))


def appb_grid() -> AuctionGrid:
    ctr = np.linspace(0.01, 1.0, 20)
    return AuctionGrid(ctr, np.linspace(0.0, 5.0, 20), 30, 5.0, discretized_normal(ctr, *APPB_CTR_NORMAL))


def _auction_preset(name: str, grid: AuctionGrid) -> Preset:
    return Preset(
        name=name,
        spec=build_game_spec(grid, WelfareParams(), horizon=0, name=name),
        grid=grid,
        solver=AUCTION_SOLVER,
        heuristic=HeuristicConfig(kappa=10, eta=0.7, horizon=1000),
        alpha0=BidDistribution(discretized_normal(grid.bid_values, *APPB_BID_NORMAL)),
    )


def _toy() -> Preset:
    return Preset(
        name="toy",
        spec=single_point_game(),
        grid=None,
        solver=SolverConfig(step_size=0.1, max_iters=200),
    )


_BUILDERS = {
    "paper-sec3": lambda: _auction_preset("paper-sec3", sec3_grid()),
    "paper-appB": lambda: _auction_preset("paper-appB", appb_grid()),
    "toy": _toy,
}

PRESET_NAMES = tuple(_BUILDERS)


def get_preset(name: str) -> Preset:
    try:
        return _BUILDERS[name]()
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESET_NAMES)}") from None


def custom_auction_preset(ctr_values, bid_values, density, utility, state_dist=None,
                          name="custom") -> Preset:
    ctr = np.asarray(ctr_values, dtype=float)
    mu = np.full(ctr.size, 1 / ctr.size) if state_dist is None else np.asarray(state_dist, dtype=float)
    return _auction_preset(name, AuctionGrid(ctr, np.asarray(bid_values, dtype=float), density, utility, mu))
