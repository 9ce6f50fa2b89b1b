"""Sweeps, single solves, heuristic batches and the oracle check suite.

Game specs hold closures and cannot be pickled, so work sent to worker
processes carries a :class:`PresetRef` and rebuilds its spec on arrival.
"""

from __future__ import annotations

import csv
import datetime as _dt
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .auction import build_game_spec, pair_metrics
from .game import GameSpec, Policy, exploitability, propagate_flow
from .games import random_game
from .heuristic import BidDistribution, HeuristicConfig, heuristic_policy, run_heuristic_batch
from .omo import (
    MesobWeights,
    OmoIterate,
    SolverAbort,
    SolverConfig,
    complementarity_check,
    evaluate_solution,
    mesob_gradient,
    mesob_objective,
    project_d,
    project_y,
    project_z,
    solve,
)
from .oracles import OracleReport, brute_exploitability, fd_gradient, mc_auction_stats, qp_projection
from .presets import Preset, custom_auction_preset, get_preset

# --------------------------------------------------------------------------
# preset references


@dataclass(frozen=True)
class PresetRef:
    """Picklable recipe for a preset: a registered name or an inline grid."""

    name: str = "paper-sec3"
    grid: Optional[tuple] = None  # (ctr_values, bid_values, density, utility, state_dist)
    horizon: int = 0

    def build(self) -> Preset:
        if self.grid is None:
            preset = get_preset(self.name)
        else:
            ctr, bids, n, v, mu = self.grid
            preset = custom_auction_preset(ctr, bids, n, v, mu, name=self.name)
        if self.horizon and preset.grid is not None:
            preset = replace(preset, spec=build_game_spec(preset.grid, preset.spec.meta["welfare"],
                                                          horizon=self.horizon, name=preset.name))
        return preset


# --------------------------------------------------------------------------
# CSV output

FLOAT_FORMAT = ".17g"


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return format(float(x), FLOAT_FORMAT)
    return str(x)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """One header comment line with a timestamp, then a plain CSV body."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    with path.open("w", newline="") as fh:
        fh.write(f"# generated {stamp}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def read_csv(path: Path) -> list[dict]:
    with Path(path).open() as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


# --------------------------------------------------------------------------
# single solves and sweeps


@dataclass
class SweepRecord:
    lambda1: float
    lambda2: float
    exploitability: float
    welfare: float
    v_ctr: float
    v_sale: float
    v_cpc: float
    g_cs: float
    h_br: float
    comp: float
    iters: int
    wall_ms: int
    label: str = ""
    status: str = "ok"
    certificate: bool = False

    @classmethod
    def header(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    def row(self) -> tuple:
        return tuple(getattr(self, f.name) for f in fields(self))

    @property
    def ratio(self) -> float:
        return math.inf if self.lambda2 == 0 else self.lambda1 / self.lambda2


def pair_label(lambda1: float, lambda2: float) -> str:
    if lambda1 == 0:
        return "NE"
    if lambda2 == 0:
        return "MFC"
    return ""


def pair_seed(root: int, lambda1: float, lambda2: float) -> int:
    """Seed that depends only on the root seed and the weight pair."""
    words = np.frombuffer(np.array([lambda1, lambda2]).tobytes(), dtype=np.uint32)
    return int(np.random.SeedSequence([root & 0xFFFFFFFF, *words.tolist()]).generate_state(1)[0])


def default_sweep(points: int = 9, lo: float = 1e-3, hi: float = 1e3) -> list[tuple[float, float]]:
    """Log-spaced ``lambda1/lambda2`` ratios with ``lambda1 + lambda2 = 1`` plus both extremes."""
    ratios = np.logspace(np.log10(lo), np.log10(hi), points)
    return [(0.0, 1.0)] + [(float(r / (1 + r)), float(1 / (1 + r))) for r in ratios] + [(1.0, 0.0)]


@dataclass
class SolveOutcome:
    iterate: OmoIterate
    diagnostics: object
    policy: Policy
    record: SweepRecord


def solve_preset(preset: Preset, weights: MesobWeights, cfg: SolverConfig) -> SolveOutcome:
    spec = preset.spec
    start = time.perf_counter()
    it, diag = solve(spec, weights, cfg)
    ev = evaluate_solution(spec, it)
    cert = complementarity_check(it, spec)
    wall = int(round(1000 * (time.perf_counter() - start)))
    v = np.full(3, np.nan)
    vals = np.asarray(ev["metric_values"], dtype=float)
    v[: min(3, vals.size)] = vals[:3]
    rec = SweepRecord(
        lambda1=weights.lambda1, lambda2=weights.lambda2,
        exploitability=ev["exploitability"], welfare=ev["welfare"],
        v_ctr=v[0], v_sale=v[1], v_cpc=v[2],
        g_cs=cert.g_cs, h_br=cert.h_br, comp=cert.comp,
        iters=diag.iterations, wall_ms=wall,
        label=pair_label(weights.lambda1, weights.lambda2),
        certificate=cert.bound_satisfied,
    )
    return SolveOutcome(it, diag, ev["policy"], rec)


def _failed_record(l1: float, l2: float, msg: str) -> SweepRecord:
    nan = math.nan
    return SweepRecord(l1, l2, nan, nan, nan, nan, nan, nan, nan, nan, 0, 0,
                       pair_label(l1, l2), f"failed: {msg}", False)


def _sweep_job(args) -> SweepRecord:
    ref, l1, l2, rho1, rho2, cfg = args
    try:
        preset = ref.build()
        cfg = replace(cfg, seed=pair_seed(cfg.seed, l1, l2))
        return solve_preset(preset, MesobWeights(l1, l2, rho1, rho2), cfg).record
    except (SolverAbort, ArithmeticError, ValueError) as exc:
        return _failed_record(l1, l2, str(exc).replace("\n", " "))


def run_sweep(ref: PresetRef, pairs: Sequence[tuple[float, float]], cfg: SolverConfig,
              rho1: float = 1.0, rho2: float = 0.1, workers: int = 1) -> list[SweepRecord]:
    """One solve per weight pair; rows come back sorted by ``lambda1/lambda2``.

    The worker count only changes scheduling, never results.
    """
    if not pairs:
        raise ValueError("sweep grid is empty")
    jobs = [(ref, float(l1), float(l2), rho1, rho2, cfg) for l1, l2 in pairs]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_sweep_job, jobs))
    else:
        records = [_sweep_job(j) for j in jobs]
    order = sorted(range(len(records)), key=lambda i: (records[i].ratio, i))
    return [records[i] for i in order]


def dominated_pairs(records: Sequence[SweepRecord], margin: float = 0.02) -> list[tuple[int, int]]:
    """Pairs ``(i, j)`` where row ``j`` beats row ``i`` by more than ``margin`` in both
    objectives, each rescaled to ``[0, 1]`` over the successful rows."""
    ok = [r for r in records if r.status == "ok"]
    if len(ok) < 2:
        return []
    ex = np.array([r.exploitability for r in ok])
    we = np.array([r.welfare for r in ok])
    ex_n = (ex - ex.min()) / max(np.ptp(ex), 1e-300)
    we_n = (we - we.min()) / max(np.ptp(we), 1e-300)
    return [(i, j) for i in range(len(ok)) for j in range(len(ok))
            if i != j and ex_n[j] < ex_n[i] - margin and we_n[j] > we_n[i] + margin]


# --------------------------------------------------------------------------
# heuristic batches


@dataclass
class HeuristicSummary:
    runs: list
    average: np.ndarray
    mean_exploitability: float
    average_policy_exploitability: float
    per_run_exploitability: np.ndarray = field(repr=False)


def run_heuristic_seeds(preset: Preset, cfg: HeuristicConfig, num_runs: int,
                        alpha0: Optional[BidDistribution] = None, keep_trajectory: bool = True,
                        batch: int = 250) -> HeuristicSummary:
    """Runs seeds ``cfg.seed, cfg.seed + 1, ...`` and summarizes their final policies."""
    if preset.grid is None:
        raise ValueError(f"preset {preset.name!r} is not an auction")
    alpha0 = alpha0 or preset.alpha0
    seeds = [cfg.seed + i for i in range(num_runs)]
    runs = []
    for lo in range(0, num_runs, batch):
        runs.extend(run_heuristic_batch(preset.grid, alpha0, cfg, seeds[lo:lo + batch], keep_trajectory))
    finals = np.array([r.trajectory[-1] for r in runs])
    spec = preset.spec
    per_run = np.array([exploitability(spec, heuristic_policy(preset.grid, BidDistribution(f), spec.horizon))
                        for f in finals])
    avg = finals.mean(axis=0)
    avg = avg / avg.sum()
    avg_expl = exploitability(spec, heuristic_policy(preset.grid, BidDistribution(avg), spec.horizon))
    return HeuristicSummary(runs, avg, float(per_run.mean()), avg_expl, per_run)


# --------------------------------------------------------------------------
# oracle check suite


def random_interior_iterate(spec: GameSpec, rng: np.random.Generator) -> OmoIterate:
    """Feasible point strictly inside the d-simplices and the z budget set."""
    T1, S, A = spec.shape
    d = rng.dirichlet(np.ones(S * A), size=T1).reshape(T1, S, A)
    z = rng.uniform(0.05, 1.0, size=(T1, S, A)) * min(1.0, spec.z_budget / (2 * S * A * T1))
    y = rng.normal(size=(T1, S))
    y *= min(1.0, 0.5 * spec.y_radius / np.linalg.norm(y))
    return OmoIterate(y, z, d)


def gradient_rel_error(spec: GameSpec, it: OmoIterate, w: MesobWeights, step: float = 1e-6,
                       floor: float = 1e-8, corrupt: bool = False) -> float:
    """Largest per-coordinate relative error of the analytic gradient against FD."""
    T1, S, A = spec.shape
    ny, nz = T1 * S, T1 * S * A
    gy, gz, gd = mesob_gradient(spec, it, w)
    analytic = np.concatenate([gy.ravel(), gz.ravel(), gd.ravel()])
    if corrupt:
        analytic = analytic * (1 + 1e-3) + 1e-3

    def f(v):
        return mesob_objective(spec, OmoIterate(v[:ny].reshape(T1, S), v[ny:ny + nz].reshape(T1, S, A),
                                                v[ny + nz:].reshape(T1, S, A)), w)

    x = np.concatenate([it.y.ravel(), it.z.ravel(), it.d.ravel()])
    fd, bad = fd_gradient(f, x, step)
    if np.any(bad):
        return math.inf
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), floor)
    return float(np.max(np.abs(analytic - fd) / scale))


def projection_max_error(rng: np.random.Generator, count: int, max_dim: int = 6) -> float:
    worst = 0.0
    for _ in range(count):
        n = int(rng.integers(1, max_dim + 1))
        x = rng.normal(scale=2.0, size=n)
        radius = float(rng.uniform(0.1, 3.0))
        worst = max(
            worst,
            float(np.max(np.abs(project_d(x.reshape(1, 1, n))[0, 0] - qp_projection(x, ("simplex", 1.0))))),
            float(np.max(np.abs(project_z(x, radius) - qp_projection(x, ("budget", radius))))),
            float(np.max(np.abs(project_y(x, radius) - qp_projection(x, ("ball", radius))))),
        )
    return worst


def random_small_game(rng: np.random.Generator) -> GameSpec:
    """Random game with ``S*A*(T+1) <= 12`` and at most 4096 deterministic policies."""
    shapes = [(S, A, T) for S in (1, 2, 3) for A in (1, 2, 3, 4) for T in (0, 1, 2)
              if S * A * (T + 1) <= 12 and A ** (S * (T + 1)) <= 4096]
    S, A, T = shapes[int(rng.integers(len(shapes)))]
    return random_game(S, A, T, seed=int(rng.integers(2**31)))


def exploitability_max_gap(rng: np.random.Generator, games: int) -> float:
    worst = 0.0
    for _ in range(games):
        spec = random_small_game(rng)
        T1, S, A = spec.shape
        pi = Policy(rng.dirichlet(np.ones(A), size=(T1, S)))
        worst = max(worst, abs(brute_exploitability(spec, pi) - exploitability(spec, pi)))
    return worst


def mc_metric_reports(preset: Preset, L, samples: int, seed: int, tag: str) -> list[OracleReport]:
    """Closed-form CTR, CPC and SALE against Monte Carlo at every grid point.

    The tolerance is three standard errors. For CTR and SALE the standard error
    is the exact one implied by the closed form (clicks are Bernoulli given a
    win); for CPC it is the sample standard error.
    """
    grid = preset.grid
    L = np.asarray(L, dtype=float)
    closed = pair_metrics(grid, L)
    mc = mc_auction_stats(grid, L, samples=samples, seed=seed)
    N = mc.samples
    p = closed["ctr"] / grid.ctr_values[:, None]
    s = grid.ctr_values[:, None]
    se_ctr = s * np.sqrt(np.clip(p * (1 - p), 0, None) / N)
    reports = []
    for key, est, se in (("ctr", mc.ctr, se_ctr), ("sale", mc.sale, grid.utility * se_ctr),
                         ("cpc", mc.cpc, mc.cpc_se)):
        for (si, ai), ref in np.ndenumerate(closed[key]):
            tol = 3.0 * float(se[si, ai]) + 1e-12
            reports.append(OracleReport(f"mc-{tag}-{key}[{si},{ai}]", float(est[si, ai]), float(ref), tol))
    return reports


def winner_conservation_gap(preset: Preset, L) -> float:
    grid = preset.grid
    m = pair_metrics(grid, np.asarray(L, dtype=float))
    won = float(np.sum(np.asarray(L) * (m["p_solo"] + m["p_tie"])))
    return abs(grid.density * won - 1.0)


def run_checks(preset: Preset, seed: int = 0, gradient_points: int = 3, mc_samples: int = 10**6,
               projection_points: int = 20, games: int = 5, corrupt_gradient: bool = False) -> list[OracleReport]:
    """Gradient, projection, exploitability and (for auctions) Monte Carlo checks."""
    rng = np.random.default_rng(seed)
    spec = preset.spec
    reports = []
    for k in range(gradient_points):
        it = random_interior_iterate(spec, rng)
        err = gradient_rel_error(spec, it, preset.weights, corrupt=corrupt_gradient)
        reports.append(OracleReport(f"gradient[{k}]", err, 0.0, 1e-5))
    reports.append(OracleReport("projection", projection_max_error(rng, projection_points), 0.0, 1e-8))
    reports.append(OracleReport("exploitability-random-games", exploitability_max_gap(rng, games), 0.0, 1e-10))
    T1, S, A = spec.shape
    if S * A * T1 <= 12 and A ** (S * T1) <= 4096:
        pi = Policy(rng.dirichlet(np.ones(A), size=(T1, S)))
        reports.append(OracleReport("exploitability-preset", brute_exploitability(spec, pi),
                                    exploitability(spec, pi), 1e-10))
    if preset.grid is not None:
        uniform = propagate_flow(spec, Policy.uniform(spec.horizon, S, A)).mass[0]
        rand = rng.dirichlet(np.ones(S * A)).reshape(S, A)
        reports.append(OracleReport("winner-conservation", winner_conservation_gap(preset, rand), 0.0, 1e-8))
        reports += mc_metric_reports(preset, uniform, mc_samples, seed, "uniform")
    return reports


__all__ = [
    "PresetRef", "SweepRecord", "SolveOutcome", "HeuristicSummary", "write_csv", "read_csv",
    "default_sweep", "run_sweep", "solve_preset", "dominated_pairs", "run_heuristic_seeds",
    "run_checks", "mc_metric_reports", "winner_conservation_gap", "gradient_rel_error",
    "random_interior_iterate", "projection_max_error", "exploitability_max_gap", "pair_seed",
]
