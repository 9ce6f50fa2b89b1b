"""Tabular finite-horizon mean-field game primitives.

Arrays indexed by time carry the time axis first: a policy or a flow is a
``(T+1, S, A)`` array, and flattening it in C order gives the canonical
index ``t*S*A + s*A + a`` used by every file format in this package.

Evaluators on a :class:`GameSpec` are vectorized over ``(s, a)``: they take
the time step and the population slice ``L_t`` (an ``(S, A)`` array) and
return every state-action value at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

SIMPLEX_TOL = 1e-10
ROW_TOL = 1e-12
EXPL_CLAMP = 1e-10

RewardFn = Callable[[int, np.ndarray], np.ndarray]
TransitionFn = Callable[[int, np.ndarray], np.ndarray]
MetricsFn = Callable[[int, np.ndarray], np.ndarray]
LinkFn = Callable[[np.ndarray], float]


class ShapeError(ValueError):
    pass


class LinkDomainError(ArithmeticError):
    """The welfare link produced a non-finite value."""


@dataclass(frozen=True, eq=False)
class GameSpec:
    """A finite-horizon tabular mean-field game.

    ``reward(t, L)`` returns ``(S, A)``, ``transition(t, L)`` returns
    ``(S, A, S)`` with the next state last, ``metrics(t, L)`` returns
    ``(K, S, A)`` and ``link(v)`` maps the K aggregated metrics to a scalar.

    The optional ``*_jac`` evaluators give derivatives with respect to the
    entries of ``L`` (two trailing ``(S, A)`` axes are appended to the output
    shape). ``None`` means the evaluator does not depend on ``L``. They are only
    needed for gradients of the penalized objective; set ``smooth=False`` for
    environments where no derivative exists.
    """

    num_states: int
    num_actions: int
    horizon: int
    initial_dist: np.ndarray
    reward: RewardFn
    transition: TransitionFn
    metrics: MetricsFn
    link: LinkFn
    reward_bound: float
    num_metrics: int = 1
    reward_jac: Optional[Callable[[int, np.ndarray], np.ndarray]] = None
    transition_jac: Optional[Callable[[int, np.ndarray], np.ndarray]] = None
    metrics_jac: Optional[Callable[[int, np.ndarray], np.ndarray]] = None
    link_grad: Optional[Callable[[np.ndarray], np.ndarray]] = None
    smooth: bool = True
    name: str = "custom"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.num_states < 1 or self.num_actions < 1:
            raise ValueError("num_states and num_actions must be positive")
        if self.horizon < 0:
            raise ValueError("horizon must be non-negative")
        if self.reward_bound <= 0:
            raise ValueError("reward_bound must be positive")
        mu0 = np.array(self.initial_dist, dtype=float)
        if mu0.shape != (self.num_states,):
            raise ShapeError(f"initial_dist has shape {mu0.shape}, expected ({self.num_states},)")
        if np.any(mu0 <= 0) or abs(mu0.sum() - 1.0) > ROW_TOL:
            raise ValueError("initial_dist must be strictly positive and sum to 1")
        mu0.setflags(write=False)
        object.__setattr__(self, "initial_dist", mu0)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.horizon + 1, self.num_states, self.num_actions)

    @property
    def z_budget(self) -> float:
        S, A, T = self.num_states, self.num_actions, self.horizon
        return S * A * (T * T + T + 2) * self.reward_bound

    @property
    def y_radius(self) -> float:
        S, T = self.num_states, self.horizon
        return S * (T + 1) * (T + 2) * self.reward_bound / 2.0


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Policy:
    """Time-indexed stochastic policy ``probs[t, s, a] = pi_t(a|s)``."""

    probs: np.ndarray

    def __post_init__(self):
        p = _frozen(self.probs)
        if p.ndim != 3:
            raise ShapeError("policy table must have shape (T+1, S, A)")
        if np.any(p < 0) or np.max(np.abs(p.sum(axis=2) - 1.0)) > ROW_TOL:
            raise ValueError("every policy row must be a probability vector")
        object.__setattr__(self, "probs", p)

    @classmethod
    def uniform(cls, horizon: int, num_states: int, num_actions: int) -> "Policy":
        return cls(np.full((horizon + 1, num_states, num_actions), 1.0 / num_actions))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.probs, dtype=dtype)


@dataclass(frozen=True, eq=False)
class FlowTable:
    """Time-indexed joint state-action distribution ``mass[t, s, a]``."""

    mass: np.ndarray

    def __post_init__(self):
        m = _frozen(self.mass)
        if m.ndim != 3:
            raise ShapeError("flow table must have shape (T+1, S, A)")
        if np.any(m < 0) or np.max(np.abs(m.sum(axis=(1, 2)) - 1.0)) > SIMPLEX_TOL:
            raise ValueError("every flow slice must be a joint probability distribution")
        object.__setattr__(self, "mass", m)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.mass, dtype=dtype)


def _table(x, spec: GameSpec, what: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.shape != spec.shape:
        raise ShapeError(f"{what} has shape {arr.shape}, expected {spec.shape}")
    return arr


def propagate_flow(spec: GameSpec, policy) -> FlowTable:
    """Mean-field flow induced by ``policy`` from the initial distribution."""
    pi = _table(policy, spec, "policy")
    flow = np.empty(spec.shape)
    flow[0] = spec.initial_dist[:, None] * pi[0]
    for t in range(spec.horizon):
        P = spec.transition(t, flow[t])
        mu_next = np.einsum("sa,sax->x", flow[t], P)
        flow[t + 1] = mu_next[:, None] * pi[t + 1]
    return FlowTable(flow)


def _q_values(spec: GameSpec, L: np.ndarray, t: int, w_next: np.ndarray) -> np.ndarray:
    q = np.asarray(spec.reward(t, L[t]), dtype=float)
    if t < spec.horizon:
        q = q + spec.transition(t, L[t]) @ w_next
    return q


def policy_value(spec: GameSpec, flow, policy) -> np.ndarray:
    """Per-state value ``J(s, pi, L)`` with the flow held fixed."""
    L = _table(flow, spec, "flow")
    pi = _table(policy, spec, "policy")
    w = np.zeros(spec.num_states)
    for t in range(spec.horizon, -1, -1):
        w = np.sum(pi[t] * _q_values(spec, L, t, w), axis=1)
    return w


def best_response(spec: GameSpec, flow) -> tuple[np.ndarray, Policy]:
    """Optimal per-state values against a fixed flow and the greedy policy.

    Ties go to the lowest action index.
    """
    L = _table(flow, spec, "flow")
    greedy = np.zeros(spec.shape)
    w = np.zeros(spec.num_states)
    states = np.arange(spec.num_states)
    for t in range(spec.horizon, -1, -1):
        q = _q_values(spec, L, t, w)
        best = np.argmax(q, axis=1)
        greedy[t, states, best] = 1.0
        w = q[states, best]
    return w, Policy(greedy)


def exploitability(spec: GameSpec, policy) -> float:
    """Best-response gain against the policy's own flow, weighted by mu0."""
    pi = _table(policy, spec, "policy")
    L = propagate_flow(spec, pi).mass
    w_star, _ = best_response(spec, L)
    gap = float(spec.initial_dist @ (w_star - policy_value(spec, L, pi)))
    if gap < 0.0:
        if gap < -EXPL_CLAMP:
            raise ArithmeticError(f"negative exploitability {gap:.3e}")
        gap = 0.0
    return gap


def social_value(spec: GameSpec, flow) -> tuple[np.ndarray, float]:
    """Aggregated social metrics ``V^(k)`` and the welfare ``F(V)``."""
    L = np.asarray(flow, dtype=float)
    if L.shape != spec.shape:
        raise ShapeError(f"flow has shape {L.shape}, expected {spec.shape}")
    values = np.zeros(spec.num_metrics)
    for t in range(spec.horizon + 1):
        contrib = np.asarray(spec.metrics(t, L[t]), dtype=float)
        values += np.einsum("ksa,sa->k", contrib, L[t])
    welfare = float(spec.link(values))
    if not np.isfinite(welfare):
        raise LinkDomainError(f"link returned {welfare} at metrics {values}")
    return values, welfare


def retrieve_policy(d) -> Policy:
    """Normalize each ``(t, s)`` row of an occupation measure into a policy.

    Rows with no mass become uniform.
    """
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise ValueError("occupation measure has negative entries")
    totals = d.sum(axis=2, keepdims=True)
    A = d.shape[2]
    with np.errstate(invalid="ignore", divide="ignore"):
        probs = np.where(totals > 0, d / totals, 1.0 / A)
    return Policy(probs)


def state_independent_policy(horizon: int, num_states: int, action_probs: Sequence[float]) -> Policy:
    probs = np.asarray(action_probs, dtype=float)
    return Policy(np.broadcast_to(probs, (horizon + 1, num_states, probs.size)).copy())
