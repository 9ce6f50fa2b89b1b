"""Penalized occupation-measure objective and its projected-gradient solver.

The decision variables are an occupation measure ``d`` of shape
``(T+1, S, A)``, a dual-like vector ``y`` of shape ``(T+1, S)`` and a
non-negative slack ``z`` of shape ``(T+1, S, A)``. The objective is

    -lambda1 * F(V(d)) + lambda2 * <z, d> + rho1 * g_cs(d) + rho2 * h_br(y, z, d)

where ``g_cs`` penalizes violations of the flow dynamics and ``h_br``
penalizes violations of the Bellman-type conditions linking ``y``, ``z`` and
the rewards evaluated at ``d``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .game import (
    SIMPLEX_TOL,
    GameSpec,
    Policy,
    exploitability,
    propagate_flow,
    retrieve_policy,
    social_value,
)

log = logging.getLogger(__name__)

INIT_MODES = ("uniform", "random", "warm_start")


class NonSmoothError(RuntimeError):
    pass


class SolverAbort(FloatingPointError):
    """Raised when the objective turns non-finite; carries the offending iterate."""

    def __init__(self, message: str, iterate: "OmoIterate", iteration: int):
        super().__init__(message)
        self.iterate = iterate
        self.iteration = iteration


@dataclass
class OmoIterate:
    y: np.ndarray
    z: np.ndarray
    d: np.ndarray

    @classmethod
    def zeros_like_spec(cls, spec: GameSpec, d: np.ndarray) -> "OmoIterate":
        T1, S, A = spec.shape
        return cls(np.zeros((T1, S)), np.zeros((T1, S, A)), np.array(d, dtype=float))

    def copy(self) -> "OmoIterate":
        return OmoIterate(self.y.copy(), self.z.copy(), self.d.copy())

    def feasibility_violations(self, spec: GameSpec) -> list[str]:
        problems = []
        if np.any(self.d < -SIMPLEX_TOL) or np.max(np.abs(self.d.sum(axis=(1, 2)) - 1)) > SIMPLEX_TOL:
            problems.append("d slices off the simplex")
        if np.any(self.z < 0) or self.z.sum() > spec.z_budget * (1 + 1e-12):
            problems.append("z outside its budget set")
        if np.linalg.norm(self.y) > spec.y_radius * (1 + 1e-12):
            problems.append("y outside its ball")
        return problems


@dataclass(frozen=True)
class MesobWeights:
    lambda1: float
    lambda2: float
    rho1: float = 1.0
    rho2: float = 0.1

    def __post_init__(self):
        # both trade-off weights may vanish, leaving a pure feasibility problem
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("trade-off weights must be non-negative")
        if self.rho1 <= 0 or self.rho2 <= 0:
            raise ValueError("penalty weights must be positive")


@dataclass(frozen=True)
class SolverConfig:
    step_size: float = 1e-2
    max_iters: int = 1500
    grad_tol: float = 0.0
    seed: int = 0
    init_mode: str = "uniform"
    accelerate: bool = False
    max_halvings: int = 60

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.grad_tol < 0:
            raise ValueError("grad_tol must be non-negative")
        if self.init_mode not in INIT_MODES:
            raise ValueError(f"init_mode must be one of {INIT_MODES}")


# --------------------------------------------------------------------------
# residuals and objective


def _arrays(spec: GameSpec, y, z, d):
    T1, S, A = spec.shape
    y = np.asarray(y, dtype=float).reshape(T1, S)
    z = np.asarray(z, dtype=float).reshape(T1, S, A)
    d = np.asarray(d, dtype=float).reshape(T1, S, A)
    return y, z, d


def _consistency_terms(spec: GameSpec, d: np.ndarray, kernels) -> np.ndarray:
    """Per-(t, s) mismatch between the state marginal of d and its dynamics."""
    err = np.empty(d.shape[:2])
    err[0] = d[0].sum(axis=1) - spec.initial_dist
    for t in range(spec.horizon):
        err[t + 1] = d[t + 1].sum(axis=1) - np.einsum("sa,sax->x", d[t], kernels[t])
    return err


def _bellman_terms(spec: GameSpec, y, z, rewards, kernels) -> np.ndarray:
    """Per-(t, s, a) residuals whose squares make up h_br.

    Slot 0 holds the initial-time group, which couples to ``y[T]``; slots
    ``1..T`` hold the groups that couple ``y[t-1]`` to the step-t rewards.
    """
    T = spec.horizon
    res = np.empty(z.shape)
    res[0] = y[T][:, None] + rewards[0] + kernels[0] @ y[0] + z[0]
    for t in range(1, T):
        res[t] = y[t - 1][:, None] - rewards[t] - kernels[t] @ y[t] - z[t]
    if T >= 1:
        res[T] = y[T - 1][:, None] - rewards[T] - z[T]
    return res


def consistency_residual(spec: GameSpec, d) -> float:
    """Squared violation of the initial-distribution and flow-update equations."""
    d = np.asarray(d, dtype=float).reshape(spec.shape)
    if np.any(d < 0):
        raise ValueError("occupation measure has negative entries")
    kernels = [spec.transition(t, d[t]) for t in range(spec.horizon + 1)]
    return float(np.sum(_consistency_terms(spec, d, kernels) ** 2))


def best_response_residual(spec: GameSpec, y, z, d) -> float:
    y, z, d = _arrays(spec, y, z, d)
    rewards = [np.asarray(spec.reward(t, d[t]), dtype=float) for t in range(spec.horizon + 1)]
    kernels = [spec.transition(t, d[t]) for t in range(spec.horizon + 1)]
    return float(np.sum(_bellman_terms(spec, y, z, rewards, kernels) ** 2))


@dataclass
class ObjectiveTerms:
    objective: float
    welfare: float
    metric_values: np.ndarray
    comp: float
    g_cs: float
    h_br: float


def _evaluate(spec: GameSpec, y, z, d, w: MesobWeights, with_grad: bool):
    y, z, d = _arrays(spec, y, z, d)
    T = spec.horizon
    times = range(T + 1)
    rewards = [np.asarray(spec.reward(t, d[t]), dtype=float) for t in times]
    kernels = [np.asarray(spec.transition(t, d[t]), dtype=float) for t in times]
    metrics = [np.asarray(spec.metrics(t, d[t]), dtype=float) for t in times]

    values = sum(np.einsum("ksa,sa->k", metrics[t], d[t]) for t in times)
    welfare = float(spec.link(values))
    cons = _consistency_terms(spec, d, kernels)
    bell = _bellman_terms(spec, y, z, rewards, kernels)
    comp = float(np.sum(z * d))
    g_cs = float(np.sum(cons**2))
    h_br = float(np.sum(bell**2))
    obj = -w.lambda1 * welfare + w.lambda2 * comp + w.rho1 * g_cs + w.rho2 * h_br
    terms = ObjectiveTerms(obj, welfare, values, comp, g_cs, h_br)
    if not with_grad:
        return terms, None

    if not spec.smooth:
        raise NonSmoothError(f"game '{spec.name}' declares non-differentiable evaluators")
    S, A = spec.num_states, spec.num_actions
    zero_r = np.zeros((S, A, S, A))
    zero_p = np.zeros((S, A, S, S, A))
    zero_m = np.zeros((spec.num_metrics, S, A, S, A))
    jr = [spec.reward_jac(t, d[t]) if spec.reward_jac else zero_r for t in times]
    jp = [spec.transition_jac(t, d[t]) if spec.transition_jac else zero_p for t in times]
    jm = [spec.metrics_jac(t, d[t]) if spec.metrics_jac else zero_m for t in times]

    gy = np.zeros_like(y)
    gz = np.zeros_like(z)
    gd = np.zeros_like(d)

    # welfare
    if w.lambda1:
        if spec.link_grad is None:
            raise NonSmoothError("link has no gradient")
        dF = np.asarray(spec.link_grad(values), dtype=float)
        for t in times:
            dV = metrics[t] + np.einsum("sa,ksaxb->kxb", d[t], jm[t])
            gd[t] -= w.lambda1 * np.einsum("k,kxb->xb", dF, dV)

    # complementarity
    gz += w.lambda2 * d
    gd += w.lambda2 * z

    # consistency
    c = 2.0 * w.rho1 * cons
    gd[0] += c[0][:, None]
    for t in range(T):
        gd[t + 1] += c[t + 1][:, None]
        gd[t] -= kernels[t] @ c[t + 1]
        gd[t] -= np.einsum("x,uv,uvxsa->sa", c[t + 1], d[t], jp[t])

    # best response
    b = 2.0 * w.rho2 * bell
    gy[T] += b[0].sum(axis=1)
    gy[0] += np.einsum("sa,sax->x", b[0], kernels[0])
    gz[0] += b[0]
    gd[0] += np.einsum("sa,saxb->xb", b[0], jr[0]) + np.einsum("sa,sauxb,u->xb", b[0], jp[0], y[0])
    for t in range(1, T + 1):
        gy[t - 1] += b[t].sum(axis=1)
        gz[t] -= b[t]
        gd[t] -= np.einsum("sa,saxb->xb", b[t], jr[t])
        if t < T:
            gy[t] -= np.einsum("sa,sax->x", b[t], kernels[t])
            gd[t] -= np.einsum("sa,sauxb,u->xb", b[t], jp[t], y[t])
    return terms, (gy, gz, gd)


def objective_terms(spec: GameSpec, it: OmoIterate, w: MesobWeights) -> ObjectiveTerms:
    return _evaluate(spec, it.y, it.z, it.d, w, with_grad=False)[0]


def mesob_objective(spec: GameSpec, it: OmoIterate, w: MesobWeights) -> float:
    return objective_terms(spec, it, w).objective


def mesob_gradient(spec: GameSpec, it: OmoIterate, w: MesobWeights) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact gradient of the objective as ``(d/dy, d/dz, d/dd)``."""
    return _evaluate(spec, it.y, it.z, it.d, w, with_grad=True)[1]


# --------------------------------------------------------------------------
# projections


def _simplex(v: np.ndarray, total: float = 1.0) -> np.ndarray:
    """Euclidean projection of each row of ``v`` onto {x >= 0, sum x = total}."""
    v = np.atleast_2d(v)
    n = v.shape[1]
    u = -np.sort(-v, axis=1)
    css = np.cumsum(u, axis=1) - total
    k = np.arange(1, n + 1)
    active = u - css / k > 0
    rho = n - 1 - np.argmax(active[:, ::-1], axis=1)
    theta = css[np.arange(v.shape[0]), rho] / (rho + 1)
    return np.maximum(v - theta[:, None], 0.0)


def project_d(d_raw) -> np.ndarray:
    d_raw = np.asarray(d_raw, dtype=float)
    flat = d_raw.reshape(d_raw.shape[0], -1)
    return _simplex(flat).reshape(d_raw.shape)


def project_z(z_raw, budget: float) -> np.ndarray:
    if budget <= 0:
        raise ValueError("budget must be positive")
    z_raw = np.asarray(z_raw, dtype=float)
    clipped = np.maximum(z_raw, 0.0)
    if clipped.sum() <= budget:
        return clipped
    return _simplex(z_raw.reshape(1, -1), budget).reshape(z_raw.shape)


def project_y(y_raw, radius: float) -> np.ndarray:
    if radius <= 0:
        raise ValueError("radius must be positive")
    y_raw = np.asarray(y_raw, dtype=float)
    norm = np.linalg.norm(y_raw)
    if norm <= radius:
        return y_raw.copy()
    return y_raw * (radius / norm)


def project(spec: GameSpec, y, z, d) -> OmoIterate:
    return OmoIterate(project_y(y, spec.y_radius), project_z(z, spec.z_budget), project_d(d))


# --------------------------------------------------------------------------
# solver


@dataclass
class SolveDiagnostics:
    history: list = field(default_factory=list)  # (iteration, objective, g_cs, h_br, comp, step)
    iterations: int = 0
    final_step: float = 0.0
    converged: bool = False
    final: Optional[ObjectiveTerms] = None

    HEADER = ("iteration", "objective", "g_cs", "h_br", "comp", "step_size")


def initial_iterate(spec: GameSpec, cfg: SolverConfig, warm_start: Optional[OmoIterate] = None) -> OmoIterate:
    if cfg.init_mode == "warm_start":
        if warm_start is None:
            raise ValueError("init_mode 'warm_start' needs an iterate")
        return project(spec, warm_start.y, warm_start.z, warm_start.d)
    if cfg.init_mode == "uniform":
        pi = Policy.uniform(spec.horizon, spec.num_states, spec.num_actions)
        return OmoIterate.zeros_like_spec(spec, propagate_flow(spec, pi).mass)
    rng = np.random.default_rng(cfg.seed)
    T1, S, A = spec.shape
    pi = Policy(rng.dirichlet(np.ones(A), size=(T1, S)))
    d = propagate_flow(spec, pi).mass
    y = rng.normal(scale=spec.reward_bound, size=(T1, S))
    z = rng.uniform(0, spec.reward_bound, size=(T1, S, A))
    return project(spec, y, z, d)


def _norm3(a, b, c) -> float:
    return float(np.sqrt(np.sum(a**2) + np.sum(b**2) + np.sum(c**2)))


def solve(spec: GameSpec, w: MesobWeights, cfg: SolverConfig,
          warm_start: Optional[OmoIterate] = None) -> tuple[OmoIterate, SolveDiagnostics]:
    """Projected gradient descent with step halving whenever the objective rises.

    With ``cfg.accelerate`` the gradient is taken at an extrapolated point
    (Nesterov momentum). Momentum is reset whenever the accepted objective
    would rise, so the recorded objective sequence is non-increasing in both
    modes.
    """
    it = initial_iterate(spec, cfg, warm_start)
    terms = _evaluate(spec, it.y, it.z, it.d, w, with_grad=False)[0]
    if not np.isfinite(terms.objective):
        raise SolverAbort("non-finite objective at the initial iterate", it, 0)
    diag = SolveDiagnostics()
    diag.history.append((0, terms.objective, terms.g_cs, terms.h_br, terms.comp, cfg.step_size))
    step = cfg.step_size
    look = it  # point where the gradient is evaluated
    theta = 1.0
    for k in range(1, cfg.max_iters + 1):
        gy, gz, gd = mesob_gradient(spec, look, w)
        for _ in range(cfg.max_halvings):
            cand = project(spec, look.y - step * gy, look.z - step * gz, look.d - step * gd)
            cand_terms = objective_terms(spec, cand, w)
            if not np.isfinite(cand_terms.objective):
                raise SolverAbort(f"non-finite objective at iteration {k}", cand, k)
            if cand_terms.objective <= terms.objective + 1e-12:
                break
            if look is not it:
                # drop the momentum before shrinking the step
                look, theta = it, 1.0
                gy, gz, gd = mesob_gradient(spec, look, w)
                continue
            step *= 0.5
        else:
            log.debug("step halving exhausted at iteration %d", k)
            diag.converged = True
            break
        moved = _norm3(cand.y - it.y, cand.z - it.z, cand.d - it.d)
        prev, it, terms = it, cand, cand_terms
        diag.history.append((k, terms.objective, terms.g_cs, terms.h_br, terms.comp, step))
        diag.iterations = k
        if moved / step <= cfg.grad_tol:
            diag.converged = True
            break
        if cfg.accelerate:
            theta_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * theta * theta))
            beta = (theta - 1.0) / theta_next
            theta = theta_next
            look = OmoIterate(
                it.y + beta * (it.y - prev.y), it.z + beta * (it.z - prev.z), it.d + beta * (it.d - prev.d)
            )
            look = project(spec, look.y, look.z, look.d)
        else:
            look = it
    diag.final_step = step
    diag.final = terms
    return it, diag


# --------------------------------------------------------------------------
# certificate


@dataclass(frozen=True)
class ComplementarityReport:
    comp: float
    g_cs: float
    h_br: float
    exploitability: float
    slack: float
    bound_satisfied: bool


def default_slack_constant(spec: GameSpec) -> float:
    return 10.0 * spec.reward_bound * spec.num_states * spec.num_actions * (spec.horizon + 1)


def complementarity_check(it: OmoIterate, spec: GameSpec, constant: Optional[float] = None) -> ComplementarityReport:
    """Check that <z, d> plus a residual-driven slack bounds the exploitability of Pi(d)."""
    C = default_slack_constant(spec) if constant is None else constant
    d = np.clip(it.d, 0.0, None)
    g = consistency_residual(spec, d)
    h = best_response_residual(spec, it.y, it.z, d)
    comp = float(np.sum(it.z * d))
    expl = exploitability(spec, retrieve_policy(d))
    slack = C * (np.sqrt(g) + np.sqrt(h))
    return ComplementarityReport(comp, g, h, expl, float(slack), comp + slack >= expl)


def evaluate_solution(spec: GameSpec, it: OmoIterate) -> dict:
    """Exploitability and welfare of the policy retrieved from ``it.d``."""
    pi = retrieve_policy(np.clip(it.d, 0.0, None))
    flow = propagate_flow(spec, pi)
    values, welfare = social_value(spec, flow)
    return {"policy": pi, "exploitability": exploitability(spec, pi), "welfare": welfare, "metric_values": values}
