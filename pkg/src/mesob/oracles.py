"""Independent reference implementations used to check the main code paths.

Nothing here imports the solver. The only shared code is the domain types
(:class:`GameSpec`, :class:`Policy`, :class:`AuctionGrid`).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .auction import SCORE_DECIMALS, AuctionGrid
from .game import GameSpec

MAX_DETERMINISTIC_POLICIES = 4096
MAX_BRUTE_SIZE = 12
MAX_QP_DIM = 6


class OracleTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class OracleReport:
    name: str
    metric: float
    reference: float
    tolerance: float
    passed: bool = False

    def __post_init__(self):
        ok = bool(abs(self.metric - self.reference) <= self.tolerance)
        object.__setattr__(self, "passed", ok)

    FIELDS = ("name", "metric", "reference", "tolerance", "passed")

    def row(self) -> tuple:
        return (self.name, self.metric, self.reference, self.tolerance, self.passed)


# Monte Carlo auctions --------------------------------------------------------

@dataclass
class McAuctionStats:
    """Per-(state, action) sample means and standard errors."""

    samples: int
    win: np.ndarray
    ctr: np.ndarray
    cpc: np.ndarray
    sale: np.ndarray
    win_se: np.ndarray
    ctr_se: np.ndarray
    cpc_se: np.ndarray
    sale_se: np.ndarray


def mc_auction_stats(grid: AuctionGrid, L_t, samples: int = 10**6, seed: int = 0,
                     chunk: int = 50_000) -> McAuctionStats:
    """Simulate ``samples`` auctions for every representative (ctr, bid) pair.

    Each trial draws ``n-1`` opponents from ``L_t``; all representatives face
    the same opponents (common random numbers). A tie at the top is resolved
    by a uniform draw. Clicks are replaced by their probability ``ctr``, which
    keeps every estimator unbiased and lowers its variance.
    """
    if samples < 10**4:
        raise ValueError("need at least 1e4 samples")
    L = np.asarray(L_t, dtype=float)
    S, A = grid.num_states, grid.num_actions
    if L.shape != (S, A):
        raise ValueError(f"L_t must have shape {(S, A)}")
    m = grid.density - 1
    ctr = grid.ctr_values
    bid = grid.bid_values
    score = np.round(np.outer(ctr, bid), SCORE_DECIMALS).ravel()
    cdf = np.cumsum(L.ravel())
    cdf /= cdf[-1]
    rng = np.random.default_rng(seed)

    rep_score = score[:, None]
    rep_ctr = np.repeat(ctr, A)[:, None]
    rep_bid = np.tile(bid, S)[:, None]
    sums = np.zeros((3, S * A))
    sq = np.zeros((3, S * A))
    done = 0
    while done < samples:
        k = min(chunk, samples - done)
        pick = np.minimum(np.searchsorted(cdf, rng.random((k, m)), side="right"), S * A - 1)
        opp = score[pick]
        top = opp.max(axis=1)
        ties = np.sum(opp == top[:, None], axis=1)
        u = rng.random(k)
        solo = rep_score > top[None, :]
        tied = rep_score == top[None, :]
        win = solo | (tied & (u[None, :] * (ties[None, :] + 1) < 1.0))
        pay = np.where(solo, top[None, :], rep_bid * rep_ctr) * win
        w = win.astype(float)
        for i, x in enumerate((w, rep_ctr * w, pay)):
            sums[i] += x.sum(axis=1)
            sq[i] += (x * x).sum(axis=1)
        done += k

    mean = sums / samples
    var = np.clip(sq / samples - mean**2, 0.0, None)
    se = np.sqrt(var / (samples - 1))
    shape = (S, A)
    v = grid.utility
    return McAuctionStats(
        samples=samples,
        win=mean[0].reshape(shape),
        ctr=mean[1].reshape(shape),
        cpc=mean[2].reshape(shape),
        sale=(v * mean[1]).reshape(shape),
        win_se=se[0].reshape(shape),
        ctr_se=se[1].reshape(shape),
        cpc_se=se[2].reshape(shape),
        sale_se=(v * se[1]).reshape(shape),
    )


# Finite differences ----------------------------------------------------------

def fd_gradient(f: Callable[[np.ndarray], float], x, step: float = 1e-6) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference gradient and a per-coordinate non-finite flag.

    Flagged coordinates hold NaN in the returned gradient.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.array(x, dtype=float)
    grad = np.empty(x.size)
    bad = np.zeros(x.size, dtype=bool)
    flat = x.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(x)
        flat[i] = orig - step
        lo = f(x)
        flat[i] = orig
        g = (hi - lo) / (2 * step)
        if not np.isfinite(g):
            bad[i] = True
            g = np.nan
        grad[i] = g
    return grad.reshape(x.shape), bad.reshape(x.shape)


# Brute-force exploitability ----------------------------------------------------

def _forward(spec: GameSpec, pi: np.ndarray) -> np.ndarray:
    T1, S, A = spec.shape
    flow = np.zeros((T1, S, A))
    mu = np.array(spec.initial_dist, dtype=float)
    for t in range(T1):
        for s in range(S):
            for a in range(A):
                flow[t, s, a] = mu[s] * pi[t, s, a]
        if t < T1 - 1:
            P = np.asarray(spec.transition(t, flow[t]))
            nxt = np.zeros(S)
            for s in range(S):
                for a in range(A):
                    nxt += flow[t, s, a] * P[s, a]
            mu = nxt
    return flow


def _values_from(spec: GameSpec, flow: np.ndarray, pi: np.ndarray) -> np.ndarray:
    """J(s0) for every start state, by pushing the agent's own state law forward."""
    T1, S, A = spec.shape
    rewards = [np.asarray(spec.reward(t, flow[t])) for t in range(T1)]
    kernels = [np.asarray(spec.transition(t, flow[t])) for t in range(T1 - 1)]
    out = np.zeros(S)
    for s0 in range(S):
        rho = np.zeros(S)
        rho[s0] = 1.0
        total = 0.0
        for t in range(T1):
            joint = rho[:, None] * pi[t]
            total += float(np.sum(joint * rewards[t]))
            if t < T1 - 1:
                rho = np.einsum("sa,sax->x", joint, kernels[t])
        out[s0] = total
    return out


def brute_exploitability(spec: GameSpec, policy) -> float:
    """Largest mu0-weighted gain over all deterministic Markov deviations."""
    T1, S, A = spec.shape
    if S * A * T1 > MAX_BRUTE_SIZE or A ** (S * T1) > MAX_DETERMINISTIC_POLICIES:
        raise OracleTooLarge(f"{A}^{S * T1} deterministic policies on a size-{S * A * T1} game")
    pi = np.asarray(policy, dtype=float)
    flow = _forward(spec, pi)
    mu0 = np.asarray(spec.initial_dist)
    base = float(mu0 @ _values_from(spec, flow, pi))
    best = -np.inf
    for choice in itertools.product(range(A), repeat=S * T1):
        det = np.zeros((T1, S, A))
        det[np.repeat(np.arange(T1), S), np.tile(np.arange(S), T1), choice] = 1.0
        best = max(best, float(mu0 @ _values_from(spec, flow, det)))
    return best - base


# Projections by facet enumeration ------------------------------------------------

def _affine_face(x: np.ndarray, zero: tuple, total: float | None) -> np.ndarray:
    y = x.copy()
    y[list(zero)] = 0.0
    if total is not None:
        free = [i for i in range(x.size) if i not in zero]
        if not free:
            return np.full(x.size, np.nan)
        y[free] += (total - y[free].sum()) / len(free)
    return y


def qp_projection(point, constraint: tuple) -> np.ndarray:
    """Euclidean projection onto a small set by enumerating its faces.

    ``constraint`` is ``("simplex", total)``, ``("budget", b)`` for
    ``{x >= 0, sum(x) <= b}`` or ``("ball", r)``.
    """
    x = np.asarray(point, dtype=float).ravel()
    if x.size > MAX_QP_DIM:
        raise OracleTooLarge(f"dimension {x.size} exceeds {MAX_QP_DIM}")
    kind, param = constraint
    if kind == "ball":
        norm = np.sqrt(np.sum(x * x))
        return x.copy() if norm <= param else x * (param / norm)
    if kind not in ("simplex", "budget"):
        raise ValueError(f"unsupported constraint set {kind!r}")

    tol = 1e-12 * max(1.0, abs(param))
    best, best_dist = None, np.inf
    sum_active = [True] if kind == "simplex" else [False, True]
    for k in range(x.size + 1):
        for zero in itertools.combinations(range(x.size), k):
            for on_sum in sum_active:
                y = _affine_face(x, zero, param if on_sum else None)
                if np.any(np.isnan(y)) or np.any(y < -tol):
                    continue
                if kind == "budget" and y.sum() > param + tol:
                    continue
                dist = np.sum((y - x) ** 2)
                if dist < best_dist:
                    best, best_dist = y, dist
    if best is None:
        raise ValueError("constraint set is empty")
    return np.clip(best, 0.0, None)
