"""Pay-per-click second-price auction as a mean-field game.

A bidder's state is its click-through rate ``s`` and its action a bid ``a``;
it is ranked by the score ``s*a``. A representative bidder faces ``n-1``
opponents whose (ctr, bid) pairs are drawn i.i.d. from the population slice
``L_t``. The solo winner pays the second-highest score divided by its own CTR
per click; tied winners are picked uniformly and pay their own bid.

All closed-form quantities are polynomials in the per-score masses, so the
derivatives below are exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from math import comb

import numpy as np

from .game import GameSpec

SCORE_DECIMALS = 12


@dataclass(frozen=True, eq=False)
class AuctionGrid:
    ctr_values: np.ndarray
    bid_values: np.ndarray
    density: int
    utility: float
    state_dist: np.ndarray

    def __post_init__(self):
        ctr = np.array(self.ctr_values, dtype=float)
        bids = np.array(self.bid_values, dtype=float)
        mu = np.array(self.state_dist, dtype=float)
        if ctr.ndim != 1 or ctr.size == 0 or np.any(np.diff(ctr) <= 0):
            raise ValueError("ctr_values must be strictly increasing")
        if np.any(ctr <= 0) or np.any(ctr > 1):
            raise ValueError("ctr_values must lie in (0, 1]")
        if bids.ndim != 1 or bids.size == 0 or np.any(np.diff(bids) < 0) or np.any(bids < 0):
            raise ValueError("bid_values must be non-negative and non-decreasing")
        if mu.shape != ctr.shape or np.any(mu <= 0) or abs(mu.sum() - 1.0) > 1e-12:
            raise ValueError("state_dist must be a positive probability vector over ctr_values")
        if int(self.density) != self.density or self.density < 2:
            # with a single bidder every win-probability sum is empty
            raise ValueError("density must be an integer >= 2")
        if self.utility < 0:
            raise ValueError("utility must be non-negative")
        for name, arr in (("ctr_values", ctr), ("bid_values", bids), ("state_dist", mu)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "density", int(self.density))

    @property
    def num_states(self) -> int:
        return self.ctr_values.size

    @property
    def num_actions(self) -> int:
        return self.bid_values.size

    @property
    def reward_bound(self) -> float:
        s = self.ctr_values[:, None]
        return float(np.max(np.maximum(self.utility * s, s * self.bid_values[None, :])))

    @cached_property
    def index(self) -> "ScoreIndex":
        return ScoreIndex.build(self)


@dataclass(frozen=True, eq=False)
class ScoreIndex:
    """Distinct sorted scores and the (state, action) pairs that produce them."""

    scores: np.ndarray
    pair_to_rank: np.ndarray
    rank_to_pairs: tuple

    @classmethod
    def build(cls, grid: AuctionGrid) -> "ScoreIndex":
        raw = np.round(np.outer(grid.ctr_values, grid.bid_values), SCORE_DECIMALS)
        scores, inverse = np.unique(raw, return_inverse=True)
        ranks = inverse.reshape(raw.shape)
        pairs = tuple(
            tuple(zip(*np.nonzero(ranks == r))) for r in range(scores.size)
        )
        pairs = tuple(tuple((int(s), int(a)) for s, a in group) for group in pairs)
        scores.setflags(write=False)
        ranks.setflags(write=False)
        return cls(scores, ranks, pairs)

    @property
    def num_ranks(self) -> int:
        return self.scores.size

    @cached_property
    def aggregation(self) -> np.ndarray:
        """0/1 matrix of shape (R, S*A) summing pair masses into score masses."""
        M = np.zeros((self.num_ranks, self.pair_to_rank.size))
        M[self.pair_to_rank.ravel(), np.arange(self.pair_to_rank.size)] = 1.0
        return M

    @property
    def has_collisions(self) -> bool:
        return self.num_ranks < self.pair_to_rank.size


@dataclass(frozen=True)
class WelfareParams:
    c1: float = 1 / 3
    c2: float = 1 / 3
    c3: float = 1 / 3
    eps0: float = 1e-5
    eps1: float = 1e-5
    eps2: float = 1e-5
    eps3: float = 1e-5

    def __post_init__(self):
        if min(self.c1, self.c2, self.c3) < 0:
            raise ValueError("welfare coefficients must be non-negative")
        if min(self.eps0, self.eps1, self.eps2, self.eps3) <= 0:
            raise ValueError("welfare guards must be positive")


def score_distribution(grid: AuctionGrid, index: ScoreIndex, L_t) -> tuple[np.ndarray, np.ndarray]:
    """Mass at each score rank and the mass strictly below it."""
    L_t = np.asarray(L_t, dtype=float)
    lam = index.aggregation @ L_t.ravel()
    below = np.concatenate(([0.0], np.cumsum(lam)[:-1]))
    return lam, below


def _tie_coeffs(m: int) -> np.ndarray:
    return np.array([comb(m, i) / (i + 1) for i in range(m + 1)])


def _rank_tables(grid: AuctionGrid, lam: np.ndarray, below: np.ndarray):
    """Per-rank solo-win probability, tie-win probability and solo payment."""
    m = grid.density - 1
    z = grid.index.scores
    coef = _tie_coeffs(m)
    powers = below ** m
    step = np.diff(powers)  # P(highest opponent score is exactly z_j), j = 0..R-2
    p_solo = np.concatenate(([0.0], np.cumsum(step)))
    pay_solo = np.concatenate(([0.0], np.cumsum(step * z[:-1])))
    i = np.arange(1, m + 1)
    p_tie = np.sum(coef[i] * below[:, None] ** (m - i) * lam[:, None] ** i, axis=1)
    return p_solo, p_tie, pay_solo


def _check_pair(grid: AuctionGrid, s: int, a: int):
    if not (0 <= s < grid.num_states and 0 <= a < grid.num_actions):
        raise IndexError(f"pair ({s}, {a}) is off the grid")


def win_probabilities(grid: AuctionGrid, index: ScoreIndex, s: int, a: int, L_t) -> tuple[float, float]:
    """Solo-win and tie-win probabilities of a bidder at ctr index s, bid index a."""
    _check_pair(grid, s, a)
    lam, below = score_distribution(grid, index, L_t)
    p_solo, p_tie, _ = _rank_tables(grid, lam, below)
    l = index.pair_to_rank[s, a]
    return float(p_solo[l]), float(p_tie[l])


def pair_metrics(grid: AuctionGrid, L_t) -> dict[str, np.ndarray]:
    """Closed-form expectations for every (ctr, bid) pair at once.

    Returns ``(S, A)`` arrays under keys ``p_solo``, ``p_tie``, ``ctr``,
    ``cpc``, ``sale`` and ``reward``.
    """
    index = grid.index
    lam, below = score_distribution(grid, index, L_t)
    p_solo, p_tie, pay_solo = _rank_tables(grid, lam, below)
    r = index.pair_to_rank
    s = grid.ctr_values[:, None]
    a = grid.bid_values[None, :]
    win = p_solo[r] + p_tie[r]
    ctr = win * s
    sale = win * grid.utility * s
    cpc = pay_solo[r] + p_tie[r] * a * s
    return {
        "p_solo": p_solo[r],
        "p_tie": p_tie[r],
        "ctr": ctr,
        "cpc": cpc,
        "sale": sale,
        "reward": sale - cpc,
    }


def expected_metrics(grid: AuctionGrid, index: ScoreIndex, s: int, a: int, L_t) -> tuple[float, float, float]:
    """(CTR, CPC, SALE) of one representative bidder."""
    _check_pair(grid, s, a)
    m = pair_metrics(grid, L_t)
    return float(m["ctr"][s, a]), float(m["cpc"][s, a]), float(m["sale"][s, a])


def bidder_reward(grid: AuctionGrid, index: ScoreIndex, s: int, a: int, L_t) -> float:
    _check_pair(grid, s, a)
    return float(pair_metrics(grid, L_t)["reward"][s, a])


def pair_metric_jacobians(grid: AuctionGrid, L_t) -> dict[str, np.ndarray]:
    """Derivatives of ``ctr``, ``cpc``, ``sale``, ``reward`` w.r.t. ``L_t``.

    Each entry has shape ``(S, A, S, A)``: output pair first, input pair last.
    """
    index = grid.index
    m = grid.density - 1
    z = index.scores
    R = index.num_ranks
    lam, below = score_distribution(grid, index, L_t)
    coef = _tie_coeffs(m)

    # rank-level derivatives, first w.r.t. (mass at rank, mass below rank)
    i = np.arange(1, m + 1)
    dtie_dlam = np.sum(coef[i] * i * below[:, None] ** (m - i) * lam[:, None] ** (i - 1), axis=1)
    j = np.arange(1, m)
    dtie_dbelow = np.sum(coef[j] * (m - j) * below[:, None] ** (m - j - 1) * lam[:, None] ** j, axis=1)
    dsolo_dbelow = m * below ** (m - 1)

    strictly_below = np.tril(np.ones((R, R)), k=-1)  # [l, j] = 1 if j < l
    d_solo = dsolo_dbelow[:, None] * strictly_below
    d_solo[0] = 0.0
    d_tie = np.diag(dtie_dlam) + dtie_dbelow[:, None] * strictly_below

    # solo payment: sum_{j<l} (below_{j+1}^m - below_j^m) z_j, differentiated in below_k
    dpay_dbelow = np.zeros((R, R))
    k = np.arange(1, R)
    for l in range(1, R):
        kk = k[:l]
        nxt = np.where(kk < l, z[np.minimum(kk, R - 1)], 0.0)
        dpay_dbelow[l, kk] = dsolo_dbelow[kk] * (z[kk - 1] - nxt)
    d_pay = dpay_dbelow @ strictly_below

    r = index.pair_to_rank
    s = grid.ctr_values[:, None, None]
    a = grid.bid_values[None, :, None]
    d_win = d_solo[r] + d_tie[r]  # (S, A, R)
    d_ctr = d_win * s
    d_sale = d_win * grid.utility * s
    d_cpc = d_pay[r] + d_tie[r] * a * s
    out = {}
    for key, val in (("ctr", d_ctr), ("cpc", d_cpc), ("sale", d_sale), ("reward", d_sale - d_cpc)):
        out[key] = val[..., r]
    return out


def welfare_link(params: WelfareParams, v1: float, v2: float, v3: float) -> float:
    """Log-composite welfare over (CTR, SALE, CPC) market totals."""
    p = params
    value = (
        p.c1 * np.log(v1 + p.eps1)
        + p.c2 * np.log(v2 / (v1 * v3 + p.eps0) + p.eps2)
        + p.c3 * np.log(v1 * v3 + p.eps3)
    )
    return float(value)


def welfare_link_grad(params: WelfareParams, v1: float, v2: float, v3: float) -> np.ndarray:
    p = params
    prod = v1 * v3 + p.eps0
    ratio = v2 / prod + p.eps2
    d_ratio = np.array([-v2 * v3 / prod**2, 1.0 / prod, -v2 * v1 / prod**2])
    d_prod3 = np.array([v3, 0.0, v1]) / (v1 * v3 + p.eps3)
    return np.array([p.c1 / (v1 + p.eps1), 0.0, 0.0]) + p.c2 * d_ratio / ratio + p.c3 * d_prod3


METRIC_NAMES = ("ctr", "sale", "cpc")


def build_game_spec(grid: AuctionGrid, params: WelfareParams | None = None, horizon: int = 0,
                    name: str = "auction") -> GameSpec:
    """Repeated auction with no state transitions.

    The kernel is the identity and ``mu0`` is the CTR distribution, so the
    flow of any policy is ``mu(s) * pi_t(a|s)`` at every step.
    """
    params = params or WelfareParams()
    S, A = grid.num_states, grid.num_actions
    identity = np.broadcast_to(np.eye(S)[:, None, :], (S, A, S)).copy()
    identity.setflags(write=False)

    def reward(t, L):
        return pair_metrics(grid, L)["reward"]

    def reward_jac(t, L):
        return pair_metric_jacobians(grid, L)["reward"]

    def transition(t, L):
        return identity

    def metrics(t, L):
        m = pair_metrics(grid, L)
        return np.stack([m[k] for k in METRIC_NAMES])

    def metrics_jac(t, L):
        j = pair_metric_jacobians(grid, L)
        return np.stack([j[k] for k in METRIC_NAMES])

    return GameSpec(
        num_states=S,
        num_actions=A,
        horizon=horizon,
        initial_dist=grid.state_dist,
        reward=reward,
        transition=transition,
        metrics=metrics,
        link=lambda v: welfare_link(params, *v),
        reward_bound=grid.reward_bound,
        num_metrics=3,
        reward_jac=reward_jac,
        transition_jac=None,
        metrics_jac=metrics_jac,
        link_grad=lambda v: welfare_link_grad(params, *v),
        name=name,
        meta={"grid": grid, "welfare": params},
    )
