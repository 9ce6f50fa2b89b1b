"""Equilibrium-agnostic percentile-band bidding heuristic.

Each step simulates ``kappa`` second-price auctions with bids drawn from the
current population bid distribution and CTRs from ``mu``, recommends the
band between two percentiles of the winning bids and moves the population
toward a uniform distribution over that band.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .auction import SCORE_DECIMALS, AuctionGrid
from .game import Policy


@dataclass(frozen=True)
class HeuristicConfig:
    kappa: int = 10
    eta: float = 0.7
    horizon: int = 1000
    percentile_lo: float = 25.0
    percentile_hi: float = 75.0
    seed: int = 0

    def __post_init__(self):
        if self.kappa < 1:
            raise ValueError("kappa must be >= 1")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError("eta must lie in [0, 1]")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not 0.0 <= self.percentile_lo <= self.percentile_hi <= 100.0:
            raise ValueError("need 0 <= percentile_lo <= percentile_hi <= 100")


@dataclass(frozen=True, eq=False)
class BidDistribution:
    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=float)
        if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("bid distribution must be a probability vector")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)


@dataclass
class HeuristicRun:
    trajectory: np.ndarray  # (T+1, A); row 0 is alpha_0
    bands: np.ndarray  # (T, 2) recommended [lo, hi] per step
    seed: int

    @property
    def final(self) -> BidDistribution:
        return BidDistribution(self.trajectory[-1])

    @property
    def final_band(self) -> tuple[float, float]:
        return float(self.bands[-1, 0]), float(self.bands[-1, 1])


def discretized_normal(values, mean: float, variance: float) -> np.ndarray:
    """Normal density restricted to the grid points and normalized."""
    values = np.asarray(values, dtype=float)
    w = np.exp(-0.5 * (values - mean) ** 2 / variance)
    return w / w.sum()


def _resolve(scores: np.ndarray, tie_u: np.ndarray):
    """Winner index, tie flag and second-highest score per row of ``scores``."""
    top = scores.max(axis=1, keepdims=True)
    tied = scores == top
    count = tied.sum(axis=1)
    pick = np.floor(tie_u * count).astype(int)
    pick = np.minimum(pick, count - 1)
    order = np.cumsum(tied, axis=1) - 1
    winner = np.argmax(tied & (order == pick[:, None]), axis=1)
    rest = scores.copy()
    rest[np.arange(scores.shape[0]), winner] = -np.inf
    second = rest.max(axis=1)
    return winner, count > 1, second


def simulate_auction(grid: AuctionGrid, bids, ctrs, rng=None) -> tuple[int, float, float]:
    """One second-price auction between ``grid.density`` bidders.

    Returns the winner's index, its bid and its payment per click. A tie at
    the top is broken uniformly at random and the winner pays its own bid.
    """
    bids = np.asarray(bids, dtype=float)
    ctrs = np.asarray(ctrs, dtype=float)
    if bids.shape != (grid.density,) or ctrs.shape != (grid.density,):
        raise ValueError(f"need {grid.density} bids and ctrs")
    rng = np.random.default_rng() if rng is None else rng
    scores = np.round(bids * ctrs, SCORE_DECIMALS)[None, :]
    winner, tie, second = _resolve(scores, np.array([rng.random()]))
    w = int(winner[0])
    payment = bids[w] if tie[0] else second[0] / ctrs[w]
    return w, float(bids[w]), float(payment)


def _step_rng(seed: int, t: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(t,)))


def _inverse_cdf(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Categorical draws: ``probs`` is ``(R, A)`` and ``u`` is ``(R, ...)``."""
    cdf = np.cumsum(probs, axis=-1)
    cdf[..., -1] = 1.0
    shape = (cdf.shape[0],) + (1,) * (u.ndim - 1) + (cdf.shape[1],)
    idx = np.sum(cdf.reshape(shape) <= u[..., None], axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)


def _winning_bids(grid: AuctionGrid, alpha: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Winners' bids for a ``(R, kappa, 2n+1)`` block of uniforms, one row per run."""
    n = grid.density
    R, kappa, _ = u.shape
    bids = grid.bid_values[_inverse_cdf(alpha, u[..., :n])]
    mu = np.broadcast_to(grid.state_dist, (R, grid.num_states))
    ctrs = grid.ctr_values[_inverse_cdf(mu, u[..., n:2 * n])]
    scores = np.round(bids * ctrs, SCORE_DECIMALS).reshape(R * kappa, n)
    winner, _, _ = _resolve(scores, u[..., 2 * n].ravel())
    return bids.reshape(R * kappa, n)[np.arange(R * kappa), winner].reshape(R, kappa)


def winning_bids(grid: AuctionGrid, alpha, kappa: int, rng: np.random.Generator) -> np.ndarray:
    """Bids placed by the winners of ``kappa`` simulated auctions.

    Auction ``j`` consumes row ``j`` of a ``(kappa, 2n+1)`` block of uniforms,
    so its draws do not depend on ``kappa``.
    """
    u = rng.random((kappa, 2 * grid.density + 1))
    return _winning_bids(grid, np.asarray(alpha, dtype=float)[None], u[None])[0]


def nearest_rank(sample: np.ndarray, pct: float) -> np.ndarray | float:
    """Nearest-rank percentile along the last axis."""
    ordered = np.sort(np.asarray(sample, dtype=float), axis=-1)
    k = int(np.ceil(pct / 100.0 * ordered.shape[-1]))
    out = ordered[..., max(k, 1) - 1]
    return float(out) if out.ndim == 0 else out


def uniform_on_grid(bid_values: np.ndarray, lo, hi) -> np.ndarray:
    """Uniform[lo, hi] mapped onto the grid by midpoint-cell overlap.

    ``lo`` and ``hi`` may be arrays of band edges; the output gains their shape
    as leading axes.
    """
    b = np.asarray(bid_values, dtype=float)
    lo = np.asarray(lo, dtype=float)[..., None]
    hi = np.asarray(hi, dtype=float)[..., None]
    mids = 0.5 * (b[1:] + b[:-1])
    left = np.concatenate(([-np.inf], mids))
    right = np.concatenate((mids, [np.inf]))
    w = np.clip(np.minimum(right, hi) - np.maximum(left, lo), 0.0, None)
    total = w.sum(axis=-1, keepdims=True)
    nearest = np.argmin(np.abs(b - 0.5 * (lo + hi)), axis=-1)
    point = (np.arange(b.size) == nearest[..., None]).astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(total > 0, w / total, point)
    return out


def _update(alpha: np.ndarray, target: np.ndarray, eta: float) -> np.ndarray:
    nxt = np.clip(alpha + eta * (target - alpha), 0.0, None)
    return nxt / nxt.sum(axis=-1, keepdims=True)


def heuristic_step(grid: AuctionGrid, alpha_prev: BidDistribution, cfg: HeuristicConfig,
                   rng: np.random.Generator) -> tuple[tuple[float, float], BidDistribution]:
    alpha = np.asarray(alpha_prev.probs)
    wins = winning_bids(grid, alpha, cfg.kappa, rng)
    lo = nearest_rank(wins, cfg.percentile_lo)
    hi = nearest_rank(wins, cfg.percentile_hi)
    target = uniform_on_grid(grid.bid_values, lo, hi)
    return (lo, hi), BidDistribution(_update(alpha, target, cfg.eta))


def run_heuristic_batch(grid: AuctionGrid, alpha0: BidDistribution, cfg: HeuristicConfig,
                        seeds, keep_trajectory: bool = True) -> list[HeuristicRun]:
    """Independent runs for several seeds, advanced in lockstep.

    Each run draws exactly what :func:`run_heuristic` would draw for its seed,
    so results are the same whether runs are batched or not. With
    ``keep_trajectory=False`` only ``alpha_0`` and the final distribution are
    stored.
    """
    seeds = [int(s) for s in seeds]
    A, R, T = grid.num_actions, len(seeds), cfg.horizon
    if alpha0.probs.shape != (A,):
        raise ValueError("alpha0 must be a distribution over the bid grid")
    width = 2 * grid.density + 1
    alpha = np.tile(alpha0.probs, (R, 1))
    traj = np.empty((R, T + 1 if keep_trajectory else 2, A))
    traj[:, 0] = alpha
    bands = np.empty((R, T, 2))
    for t in range(1, T + 1):
        u = np.stack([_step_rng(s, t).random((cfg.kappa, width)) for s in seeds])
        wins = _winning_bids(grid, alpha, u)
        lo = nearest_rank(wins, cfg.percentile_lo)
        hi = nearest_rank(wins, cfg.percentile_hi)
        alpha = _update(alpha, uniform_on_grid(grid.bid_values, lo, hi), cfg.eta)
        traj[:, t if keep_trajectory else 1] = alpha
        bands[:, t - 1, 0], bands[:, t - 1, 1] = lo, hi
    return [HeuristicRun(traj[i], bands[i], seeds[i]) for i in range(R)]


def run_heuristic(grid: AuctionGrid, alpha0: BidDistribution, cfg: HeuristicConfig) -> HeuristicRun:
    return run_heuristic_batch(grid, alpha0, cfg, [cfg.seed])[0]


def heuristic_policy(grid: AuctionGrid, alpha: BidDistribution, horizon: int = 0) -> Policy:
    """Every state bids according to ``alpha`` at every step."""
    probs = np.broadcast_to(alpha.probs, (horizon + 1, grid.num_states, grid.num_actions))
    return Policy(probs.copy())
