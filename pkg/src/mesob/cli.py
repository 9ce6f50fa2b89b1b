"""Command-line entry point: ``mesob {solve,pareto,evaluate,heuristic,check}``.

Exit codes: 0 success, 1 failed check, 2 configuration or schema error,
3 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from .game import LinkDomainError, Policy, ShapeError, propagate_flow, social_value, exploitability
from .heuristic import BidDistribution, HeuristicConfig
from .omo import MesobWeights, SolverAbort, SolverConfig
from .experiments import (
    PresetRef,
    SweepRecord,
    default_sweep,
    run_checks,
    run_heuristic_seeds,
    run_sweep,
    solve_preset,
    write_csv,
)
from .oracles import OracleReport
from .presets import PRESET_NAMES, Preset

log = logging.getLogger("mesob")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# configuration

_NUM = (int, float)
# key -> (accepted types, default)
CONFIG_KEYS: dict[str, tuple[tuple, Any]] = {
    "preset": ((str,), "paper-sec3"),
    "horizon": ((int,), 0),
    "ctr_values": ((list,), None),
    "bid_values": ((list,), None),
    "density": ((int,), None),
    "utility": (_NUM, None),
    "state_dist": ((list,), None),
    "lambda1": (_NUM, 0.5),
    "lambda2": (_NUM, 0.5),
    "lambda_grid": ((list,), None),
    "sweep_points": ((int,), 9),
    "rho1": (_NUM, 1.0),
    "rho2": (_NUM, 0.1),
    "step_size": (_NUM, None),
    "iters": ((int,), None),
    "grad_tol": (_NUM, None),
    "accelerate": ((bool,), None),
    "init_mode": ((str,), None),
    "seed": ((int,), 0),
    "workers": ((int,), 1),
    "output_dir": ((str,), "out"),
    "kappa": ((int,), None),
    "eta": (_NUM, None),
    "heuristic_steps": ((int,), None),
    "percentile_lo": (_NUM, None),
    "percentile_hi": (_NUM, None),
    "alpha0": ((list,), None),
    "runs": ((int,), 1000),
    "save_runs": ((int,), 5),
    "mc_samples": ((int,), 10**6),
    "gradient_points": ((int,), 3),
}
GRID_KEYS = ("ctr_values", "bid_values", "density", "utility")


@dataclass
class ExperimentConfig:
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    @classmethod
    def load(cls, path: Optional[str], overrides: dict) -> "ExperimentConfig":
        raw: dict = {}
        if path:
            try:
                raw = yaml.safe_load(Path(path).read_text()) or {}
            except (OSError, yaml.YAMLError) as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from None
            if not isinstance(raw, dict):
                raise ConfigError("config must be a mapping of keys to values")
        raw.update({k: v for k, v in overrides.items() if v is not None})
        values = {}
        for key, val in raw.items():
            if key not in CONFIG_KEYS:
                raise ConfigError(f"unknown config key {key!r}")
            types, _ = CONFIG_KEYS[key]
            if isinstance(val, bool) and bool not in types:
                raise ConfigError(f"{key} must be {'/'.join(t.__name__ for t in types)}")
            if not isinstance(val, types):
                raise ConfigError(f"{key} must be {'/'.join(t.__name__ for t in types)}, got {type(val).__name__}")
            values[key] = val
        for key, (_, default) in CONFIG_KEYS.items():
            values.setdefault(key, default)
        if values["workers"] < 1:
            raise ConfigError("workers must be positive")
        given = [k for k in GRID_KEYS if values[k] is not None]
        if given and len(given) != len(GRID_KEYS):
            raise ConfigError(f"an inline grid needs all of {', '.join(GRID_KEYS)}")
        if not given and values["preset"] not in PRESET_NAMES:
            raise ConfigError(f"unknown preset {values['preset']!r}; choose from {', '.join(PRESET_NAMES)}")
        return cls(values)

    # builders -------------------------------------------------------------

    def preset_ref(self) -> PresetRef:
        v = self.values
        grid = None
        if v["ctr_values"] is not None:
            mu = v["state_dist"]
            grid = (tuple(v["ctr_values"]), tuple(v["bid_values"]), v["density"], float(v["utility"]),
                    None if mu is None else tuple(mu))
        name = v["preset"] if grid is None else "custom"
        return PresetRef(name=name, grid=grid, horizon=v["horizon"])

    def preset(self) -> Preset:
        try:
            return self.preset_ref().build()
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"invalid grid: {exc}") from None

    def solver(self, preset: Preset) -> SolverConfig:
        v = self.values
        mapping = {"step_size": "step_size", "iters": "max_iters", "grad_tol": "grad_tol",
                   "accelerate": "accelerate", "init_mode": "init_mode"}
        changes = {field: v[key] for key, field in mapping.items() if v[key] is not None}
        changes["seed"] = v["seed"]
        try:
            return replace(preset.solver, **changes)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def weights(self) -> MesobWeights:
        v = self.values
        try:
            return MesobWeights(float(v["lambda1"]), float(v["lambda2"]), float(v["rho1"]), float(v["rho2"]))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def sweep_pairs(self) -> list[tuple[float, float]]:
        v = self.values
        if v["lambda_grid"] is None:
            return default_sweep(v["sweep_points"])
        pairs = []
        for item in v["lambda_grid"]:
            if not (isinstance(item, list) and len(item) == 2 and all(isinstance(x, _NUM) for x in item)):
                raise ConfigError("lambda_grid entries must be [lambda1, lambda2] pairs")
            l1, l2 = float(item[0]), float(item[1])
            if l1 < 0 or l2 < 0 or l1 + l2 <= 0:
                raise ConfigError(f"invalid weight pair {item}")
            pairs.append((l1, l2))
        if not pairs:
            raise ConfigError("lambda_grid is empty")
        return pairs

    def heuristic(self, preset: Preset) -> HeuristicConfig:
        v = self.values
        base = preset.heuristic or HeuristicConfig()
        mapping = {"kappa": "kappa", "eta": "eta", "heuristic_steps": "horizon",
                   "percentile_lo": "percentile_lo", "percentile_hi": "percentile_hi"}
        changes = {field: v[key] for key, field in mapping.items() if v[key] is not None}
        changes["seed"] = v["seed"]
        try:
            return replace(base, **changes)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def alpha0(self, preset: Preset) -> BidDistribution:
        if self.values["alpha0"] is None:
            return preset.alpha0
        try:
            return BidDistribution(np.asarray(self.values["alpha0"], dtype=float))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"alpha0: {exc}") from None

    @property
    def out(self) -> Path:
        return Path(self.values["output_dir"])


# --------------------------------------------------------------------------
# policy and checkpoint files


def policy_to_json(policy: Policy) -> dict:
    T1, S, A = policy.probs.shape
    return {"horizon": T1 - 1, "num_states": S, "num_actions": A, "probs": policy.probs.ravel().tolist()}


def policy_from_json(data: Any, expected_shape: Optional[tuple] = None) -> Policy:
    if not isinstance(data, dict):
        raise ConfigError("policy file must hold a JSON object")
    missing = {"horizon", "num_states", "num_actions", "probs"} - data.keys()
    if missing:
        raise ConfigError(f"policy file is missing {sorted(missing)}")
    dims = []
    for key in ("horizon", "num_states", "num_actions"):
        val = data[key]
        if isinstance(val, bool) or not isinstance(val, int):
            raise ConfigError(f"{key} must be an integer")
        dims.append(val)
    T, S, A = dims
    if T < 0 or S < 1 or A < 1:
        raise ConfigError("policy dimensions out of range")
    probs = data["probs"]
    if not isinstance(probs, list) or len(probs) != (T + 1) * S * A:
        raise ConfigError(f"probs must be a flat list of {(T + 1) * S * A} numbers")
    if not all(isinstance(p, (int, float)) and not isinstance(p, bool) for p in probs):
        raise ConfigError("probs must contain only numbers")
    if expected_shape is not None and (T + 1, S, A) != tuple(expected_shape):
        raise ConfigError(f"policy shape {(T + 1, S, A)} does not match the preset {tuple(expected_shape)}")
    try:
        return Policy(np.asarray(probs, dtype=float).reshape(T + 1, S, A))
    except ValueError as exc:
        raise ConfigError(f"invalid policy: {exc}") from None


def _dump_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=1) + "\n")


# --------------------------------------------------------------------------
# commands


def _print_record(rec: SweepRecord) -> None:
    print(f"lambda=({rec.lambda1:g}, {rec.lambda2:g}) exploitability={rec.exploitability:.6g} "
          f"welfare={rec.welfare:.10g} g_cs={rec.g_cs:.3g} h_br={rec.h_br:.3g} comp={rec.comp:.3g} "
          f"iters={rec.iters} wall_ms={rec.wall_ms}")


def cmd_solve(cfg: ExperimentConfig) -> int:
    preset = cfg.preset()
    outcome = solve_preset(preset, cfg.weights(), cfg.solver(preset))
    out = cfg.out
    T1, S, A = preset.spec.shape
    _dump_json(out / "policy.json", policy_to_json(outcome.policy))
    ckpt = policy_to_json(outcome.policy)
    ckpt.update(y=outcome.iterate.y.ravel().tolist(), z=outcome.iterate.z.ravel().tolist(),
                d=outcome.iterate.d.ravel().tolist())
    _dump_json(out / "checkpoint.json", ckpt)
    write_csv(out / "diagnostics.csv", outcome.diagnostics.HEADER, outcome.diagnostics.history)
    write_csv(out / "summary.csv", SweepRecord.header(), [outcome.record.row()])
    _print_record(outcome.record)
    return EXIT_OK


def cmd_pareto(cfg: ExperimentConfig) -> int:
    preset = cfg.preset()
    v = cfg.values
    records = run_sweep(cfg.preset_ref(), cfg.sweep_pairs(), cfg.solver(preset),
                        rho1=float(v["rho1"]), rho2=float(v["rho2"]), workers=v["workers"])
    write_csv(cfg.out / "sweep.csv", SweepRecord.header(), [r.row() for r in records])
    for r in records:
        _print_record(r) if r.status == "ok" else print(f"lambda=({r.lambda1:g}, {r.lambda2:g}) {r.status}")
    return EXIT_OK if any(r.status == "ok" for r in records) else EXIT_NUMERIC


def evaluation_rows(preset: Preset, policy: Policy) -> list[tuple[str, float]]:
    spec = preset.spec
    values, welfare = social_value(spec, propagate_flow(spec, policy))
    rows = [("exploitability", exploitability(spec, policy)), ("welfare", welfare)]
    names = ("v_ctr", "v_sale", "v_cpc") if preset.grid is not None else tuple(f"v_{k}" for k in range(values.size))
    rows += list(zip(names, values.tolist()))
    return rows


def cmd_evaluate(cfg: ExperimentConfig, policy_path: str) -> int:
    preset = cfg.preset()
    try:
        data = json.loads(Path(policy_path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read policy file: {exc}") from None
    policy = policy_from_json(data, preset.spec.shape)
    rows = evaluation_rows(preset, policy)
    write_csv(cfg.out / "evaluation.csv", ("quantity", "value"), rows)
    for name, val in rows:
        print(f"{name} {val:.17g}")
    return EXIT_OK


def cmd_heuristic(cfg: ExperimentConfig) -> int:
    preset = cfg.preset()
    if preset.grid is None:
        raise ConfigError(f"preset {preset.name!r} has no auction grid")
    hcfg = cfg.heuristic(preset)
    runs, save = cfg["runs"], cfg["save_runs"]
    if runs < 1 or save < 0:
        raise ConfigError("runs must be positive and save_runs non-negative")
    summary = run_heuristic_seeds(preset, hcfg, runs, cfg.alpha0(preset), keep_trajectory=False)
    out = cfg.out
    kept = [r.seed for r in summary.runs[:save]]
    # re-running the saved seeds keeps memory flat for large batches
    full = run_heuristic_seeds(preset, hcfg, len(kept), cfg.alpha0(preset)).runs if kept else []
    traj_rows = ((i, t, a, p) for i, r in enumerate(full) for t, row in enumerate(r.trajectory)
                 for a, p in enumerate(row))
    write_csv(out / "heuristic_trajectory.csv", ("run_id", "t", "bid_grid_index", "probability"), traj_rows)
    band_rows = ((i, t + 1, lo, hi) for i, r in enumerate(full) for t, (lo, hi) in enumerate(r.bands))
    write_csv(out / "heuristic_bands.csv", ("run_id", "t", "lo", "hi"), band_rows)
    bids = preset.grid.bid_values
    write_csv(out / "heuristic_final.csv", ("bid_grid_index", "bid", "probability"),
              [(a, bids[a], p) for a, p in enumerate(summary.average)])
    final_bands = np.array([r.final_band for r in summary.runs])
    stats = [
        ("runs", runs),
        ("mean_exploitability", summary.mean_exploitability),
        ("average_policy_exploitability", summary.average_policy_exploitability),
        ("mass_at_max_bid", float(summary.average[-1])),
        ("mean_final_lo", float(final_bands[:, 0].mean())),
        ("mean_final_hi", float(final_bands[:, 1].mean())),
    ]
    write_csv(out / "heuristic_summary.csv", ("quantity", "value"), stats)
    for name, val in stats:
        print(f"{name} {val}")
    return EXIT_OK


def cmd_check(cfg: ExperimentConfig, corrupt_gradient: bool = False) -> int:
    preset = cfg.preset()
    reports = run_checks(preset, seed=cfg["seed"], gradient_points=cfg["gradient_points"],
                         mc_samples=cfg["mc_samples"], corrupt_gradient=corrupt_gradient)
    write_csv(cfg.out / "oracle_report.csv", OracleReport.FIELDS, [r.row() for r in reports])
    failed = [r for r in reports if not r.passed]
    for r in failed:
        print(f"FAIL {r.name}: metric={r.metric:.6g} reference={r.reference:.6g} tolerance={r.tolerance:.3g}")
    print(f"{len(reports) - len(failed)}/{len(reports)} checks passed")
    return EXIT_CHECK if failed else EXIT_OK


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML file with flat typed keys")
    common.add_argument("--preset", help=f"one of {', '.join(PRESET_NAMES)}")
    common.add_argument("--out", help="output directory")
    common.add_argument("--workers", type=int, help="worker processes for sweeps")
    common.add_argument("--seed", type=int, help="root random seed")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="mesob", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="solve one weight pair")
    sub.add_parser("pareto", parents=[common], help="sweep weight pairs")
    ev = sub.add_parser("evaluate", parents=[common], help="evaluate a policy file")
    ev.add_argument("policy", help="policy JSON file")
    sub.add_parser("heuristic", parents=[common], help="run the percentile-band heuristic")
    chk = sub.add_parser("check", parents=[common], help="run the oracle checks")
    chk.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {"preset": args.preset, "output_dir": args.out, "workers": args.workers, "seed": args.seed}
    try:
        cfg = ExperimentConfig.load(args.config, overrides)
        if args.command == "solve":
            return cmd_solve(cfg)
        if args.command == "pareto":
            return cmd_pareto(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.policy)
        if args.command == "heuristic":
            return cmd_heuristic(cfg)
        return cmd_check(cfg, corrupt_gradient=args.corrupt_gradient)
    except (ConfigError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverAbort, LinkDomainError, FloatingPointError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
