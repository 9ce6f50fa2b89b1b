"""Synthetic games for tests, oracles and the toy preset."""

from __future__ import annotations

import numpy as np

from .game import GameSpec


def random_game(S: int, A: int, T: int, seed: int = 0, coupling: float = 0.5,
                kernel_mix: float = 0.5, num_metrics: int = 1, decoupled: bool = False) -> GameSpec:
    """Random game whose rewards, kernels and metrics are affine in ``L_t``.

    ``r_t = R_t + W_t . L_t`` and ``P_t = (1 - m) P0_t + m * sum_x L_t(x) K_{t,x}``
    where every ``K_{t,x}`` is a stochastic kernel, so ``P_t`` stays stochastic
    for any simplex ``L_t``. ``decoupled=True`` drops all dependence on ``L``.
    """
    rng = np.random.default_rng(seed)
    T1 = T + 1
    base_r = rng.uniform(-1, 1, size=(T1, S, A))
    base_p = rng.dirichlet(np.ones(S), size=(T1, S, A))
    base_m = rng.uniform(0, 1, size=(T1, num_metrics, S, A))
    if decoupled:
        coupling, kernel_mix = 0.0, 0.0
    w_r = coupling * rng.uniform(-1, 1, size=(T1, S, A, S, A))
    kern = rng.dirichlet(np.ones(S), size=(T1, S, A, S, A))  # [t, x, b, s, a, :]
    jac_p = kernel_mix * (np.moveaxis(kern, (1, 2), (4, 5)) - base_p[..., None, None])  # [t, s, a, s', x, b]
    w_m = coupling * rng.uniform(-1, 1, size=(T1, num_metrics, S, A, S, A))

    def reward(t, L):
        return base_r[t] + np.einsum("saxb,xb->sa", w_r[t], L)

    def transition(t, L):
        # (1-m) P0 + m sum_x L(x) K_x == P0 + m sum_x L(x) (K_x - P0) on the simplex
        return base_p[t] + np.einsum("sauxb,xb->sau", jac_p[t], L)

    def metrics(t, L):
        return base_m[t] + np.einsum("ksaxb,xb->ksa", w_m[t], L)

    def link(v):
        v = np.asarray(v, dtype=float)
        return float(np.sum(v) - 0.1 * np.sum(v**2))

    return GameSpec(
        num_states=S,
        num_actions=A,
        horizon=T,
        initial_dist=rng.dirichlet(np.ones(S)) * 0.9 + 0.1 / S,
        reward=reward,
        transition=transition,
        metrics=metrics,
        link=link,
        reward_bound=1.0 + coupling,
        num_metrics=num_metrics,
        reward_jac=None if decoupled else (lambda t, L: w_r[t]),
        transition_jac=None if decoupled else (lambda t, L: jac_p[t]),
        metrics_jac=None if decoupled else (lambda t, L: w_m[t]),
        link_grad=lambda v: 1.0 - 0.2 * np.asarray(v, dtype=float),
        name=f"random-{S}x{A}x{T}-{seed}",
    )


def tabular_game(rewards, kernels, initial_dist, metrics=None, link=None, name="tabular") -> GameSpec:
    """Game with fixed (mean-field independent) reward and kernel tables.

    ``rewards`` is ``(T+1, S, A)``, ``kernels`` is ``(T+1, S, A, S)``.
    Without ``metrics`` the single social metric is the agent reward and the
    link is the identity, which turns welfare maximization into plain control.
    """
    rewards = np.asarray(rewards, dtype=float)
    kernels = np.asarray(kernels, dtype=float)
    T1, S, A = rewards.shape
    metrics = rewards[:, None] if metrics is None else np.asarray(metrics, dtype=float)
    K = metrics.shape[1]
    link = link or (lambda v: float(np.sum(v)))
    return GameSpec(
        num_states=S,
        num_actions=A,
        horizon=T1 - 1,
        initial_dist=initial_dist,
        reward=lambda t, L: rewards[t],
        transition=lambda t, L: kernels[t],
        metrics=lambda t, L: metrics[t],
        link=link,
        reward_bound=max(float(np.max(np.abs(rewards))), 1e-12),
        num_metrics=K,
        link_grad=lambda v: np.ones(K),
        name=name,
    )


def single_point_game(horizon: int = 0, reward: float = 1.0) -> GameSpec:
    """One state, one action: the only feasible flow puts all mass on it."""
    T1 = horizon + 1
    return tabular_game(
        np.full((T1, 1, 1), reward), np.ones((T1, 1, 1, 1)), [1.0], name="toy"
    )
