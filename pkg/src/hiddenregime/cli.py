"""Command-line entry point: ``hiddenregime {solve,simulate,verify,feynman-kac}``.

Every run writes ``manifest.json`` into the output directory before any
computation starts, then the command's artifacts. CSV and summary files
carry no timestamps, so reruns with the same configuration, seed and grid
reproduce them byte for byte in single-worker mode.

Exit codes: 0 success, 1 verification failure, 2 input error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import io
from .engine import simulate_historical
from .exceptions import HiddenRegimeError, ModelValidationError, ModelViolation
from .hjb import post_default_bundle, solve_both
from .model import MarketModel, model_from_dict, survival_probability, validate_model
from .montecarlo import (
    CheckResult,
    ExperimentConfig,
    VerificationReport,
    criterion_report,
    filter_identity_suite,
    supermartingale_test,
)
from .pde import Grid1D, feynman_kac_estimate
from .policy import ConstantPolicy, PolicyField

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_INPUT = 2
EXIT_NUMERIC = 3

DEFAULTS = {
    "seed": 0,
    "dt": 1e-3,
    "n_space": 201,
    "n_time": 1000,
    "n_paths": 1000,
    "export_paths": 100,
}

OUTPUTS = {
    "solve": ["w_post.csv", "w_pre.csv", "policy.csv", "summary.json"],
    "simulate": ["paths.csv", "filter.csv", "defaults.csv", "summary.json"],
    "verify": ["report.csv"],
    "feynman-kac": ["fk.csv", "summary.json"],
}


class InputError(Exception):
    """Bad command-line arguments or configuration."""


# ---------------------------------------------------------------------------
# Manifest and settings
# ---------------------------------------------------------------------------


@dataclass
class RunManifest:
    """Record of one CLI invocation, written before any computation."""

    command: str
    config: str
    seed: int
    grid: dict
    out: str
    model_hash: str
    outputs: list
    timestamp: str = field(default_factory=lambda: _dt.datetime.now(_dt.timezone.utc).isoformat())

    def write(self, directory: Path) -> Path:
        path = directory / "manifest.json"
        io.write_json(path, asdict(self))
        return path

    def missing_outputs(self, directory: Path) -> list:
        return [name for name in self.outputs if not (directory / name).is_file()]


@dataclass(frozen=True)
class RunSettings:
    seed: int
    dt: float
    n_space: int
    n_time: int
    n_paths: int
    workers: int


def _pick(flag, section: dict, key: str, default):
    if flag is not None:
        return flag
    return section.get(key, default)


def resolve_settings(args, cfg: dict) -> RunSettings:
    """Command-line flags override the config, which overrides the defaults."""
    sim = cfg.get("simulation", {})
    grid = cfg.get("grid", {})
    paths_key = "export_paths" if args.command == "simulate" else "n_paths"
    seed = int(_pick(args.seed, sim, "seed", DEFAULTS["seed"]))
    if not 0 <= seed < 2**64:
        raise InputError("seed must be an unsigned 64-bit integer")
    dt = float(_pick(args.dt, sim, "dt", DEFAULTS["dt"]))
    n_space = int(_pick(args.np, grid, "n_space", DEFAULTS["n_space"]))
    n_time = int(_pick(args.nt, grid, "n_time", DEFAULTS["n_time"]))
    n_paths = int(_pick(args.paths, sim, paths_key, DEFAULTS[paths_key]))
    if dt <= 0 or n_space < 3 or n_time < 1 or n_paths < 1 or args.workers < 1:
        raise InputError("dt, grid sizes, path count and workers must be positive")
    return RunSettings(seed, dt, n_space, n_time, n_paths, int(args.workers))


def load_inputs(path: str) -> tuple[dict, MarketModel]:
    try:
        cfg = io.load_config(path)
    except FileNotFoundError:
        raise InputError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise InputError(f"config file is not valid JSON: {exc}")
    try:
        model = validate_model(model_from_dict(cfg["model"]))
    except (ModelValidationError, ModelViolation, TypeError, ValueError) as exc:
        raise InputError(f"invalid model: {exc}")
    return cfg, model


def _steps(horizon: float, dt: float) -> int:
    n = int(round(horizon / dt))
    if n < 1 or abs(n * dt - horizon) > 1e-9 * max(1.0, horizon):
        raise InputError(f"dt={dt} does not divide the horizon {horizon}")
    return n


def _load_policy(path: Optional[str], model: MarketModel, fallback) -> PolicyField:
    if path is not None:
        try:
            return io.read_policy_csv(path)
        except (OSError, ValueError, StopIteration) as exc:
            raise InputError(f"cannot read policy file {path}: {exc}")
    if isinstance(fallback, PolicyField):
        return fallback
    pi = np.asarray(fallback, dtype=float)
    if pi.shape != (2,) or not np.all(np.isfinite(pi)):
        raise InputError("a constant policy needs two finite positions")
    return ConstantPolicy(float(pi[0]), float(pi[1]))


def _require_two_regimes(model: MarketModel, command: str):
    if model.n_regimes != 2:
        raise InputError(
            f"{command} needs exactly two regimes (got {model.n_regimes}); "
            "for other regime counts use `hiddenregime feynman-kac`"
        )


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_solve(model: MarketModel, cfg: dict, settings: RunSettings, out: Path) -> int:
    """Post- then pre-default solve; writes surfaces, policy table and summary."""
    grid = Grid1D(settings.n_space, settings.n_time, model.horizon)
    pre = solve_both(model, grid)
    post = pre.post
    io.write_surface_csv(out / "w_post.csv", grid.t, grid.p, post.w.values)
    io.write_surface_csv(out / "w_pre.csv", grid.t, grid.p, pre.w.values)
    policy = pre.policy_field()
    io.write_policy_csv(out / "policy.csv", policy)
    p0 = float(model.p0[0])
    w_post_range = post.w.values.max(axis=1) - post.w.values.min(axis=1)
    summary = {
        "model_hash": model.model_hash(),
        "grid": {"n_space": grid.n_space, "n_time": grid.n_time, "horizon": grid.horizon},
        "p0": p0,
        "w_pre_at_p0": float(np.interp(p0, grid.p, pre.w.values[0])),
        "w_post_at_p0": float(np.interp(p0, grid.p, post.w.values[0])),
        "w_post_p_variation": float(w_post_range.max()),
        "w_pre_min": float(pre.w.values.min()),
        "w_pre_max": float(pre.w.values.max()),
        "w_post_min": float(post.w.values.min()),
        "w_post_max": float(post.w.values.max()),
        "policy_bound": policy.bound(),
        "picard_iterations_max": pre.max_picard,
        "cfl_pre": float(pre.psi.meta["cfl"]),
        "cfl_post": float(post.psi.meta["cfl"]),
    }
    io.write_json(out / "summary.json", summary)
    return EXIT_OK


def cmd_simulate(model: MarketModel, cfg: dict, settings: RunSettings, out: Path,
                 policy: PolicyField) -> int:
    """Historical paths: prices, regime, default, filter and wealth on the time grid."""
    _steps(model.horizon, settings.dt)
    res = simulate_historical(model, policy, settings.n_paths, settings.dt, settings.seed,
                              keep_paths=True, workers=settings.workers)
    P = res.paths
    t = P["t"]
    n = t.size
    H = (np.arange(n)[None, :] >= P["kd"][:, None]).astype(int)
    log_s = np.concatenate([np.zeros((settings.n_paths, 1)), np.cumsum(P["dY"][:, :, 0], axis=1)], axis=1)
    log_p = np.concatenate([np.zeros((settings.n_paths, 1)), np.cumsum(P["dY"][:, :, 1], axis=1)], axis=1)
    S = model.s0 * np.exp(log_s)
    Pd = np.where(H == 1, 0.0, model.P0 * np.exp(log_p))
    V = np.exp(P["logV"])

    def path_rows():
        for i in range(settings.n_paths):
            for k in range(n):
                yield (i, float(t[k]), int(P["regimes"][i, k]) + 1, float(S[i, k]),
                       float(Pd[i, k]), int(H[i, k]), float(V[i, k]))

    def filter_rows():
        for i in range(settings.n_paths):
            for k in range(n):
                yield (i, float(t[k]), *map(float, P["p"][i, k]), int(H[i, k]))

    io.write_rows(out / "paths.csv", ["path", "t", "regime", "S", "P", "H", "V"], path_rows())
    N = model.n_regimes
    io.write_rows(out / "filter.csv", ["path", "t"] + [f"p_{i + 1}" for i in range(N)] + ["z"],
                  filter_rows())
    defaulted = res.tau <= model.horizon
    io.write_rows(out / "defaults.csv", ["path", "tau", "defaulted"],
                  ((i, float(tau) if d else float("inf"), int(d))
                   for i, (tau, d) in enumerate(zip(res.tau, defaulted))))
    frac = float(defaulted.mean())
    implied = 1.0 - survival_probability(model)
    io.write_json(out / "summary.json", {
        "model_hash": model.model_hash(),
        "n_paths": settings.n_paths,
        "dt": settings.dt,
        "seed": settings.seed,
        "default_fraction": frac,
        "default_fraction_se": float(np.sqrt(max(frac * (1 - frac), 0.0) / settings.n_paths)),
        "model_default_probability": implied,
        "min_filter_coordinate": res.min_p,
        "clamp_fraction": res.n_clamped / res.n_steps_total,
    })
    return EXIT_OK


def _nodes(cfg: dict, model: MarketModel):
    raw = cfg.get("verify", {}).get("nodes")
    if raw is None:
        return [(0.0, float(model.p0[0]))]
    nodes = [(float(t), float(p)) for t, p in raw]
    if not all(0.0 <= t < model.horizon and 0.0 <= p <= 1.0 for t, p in nodes):
        raise InputError("verify nodes need 0 <= t < T and 0 <= p <= 1")
    return nodes


def cmd_verify(model: MarketModel, cfg: dict, settings: RunSettings, out: Path,
               policy_file: Optional[str] = None) -> int:
    """Filter identities, criterion identity and, for two regimes, the supermartingale test."""
    _steps(model.horizon, settings.dt)
    vcfg = cfg.get("verify", {})
    g = model.gamma
    report = VerificationReport()
    problem = None
    reference = None
    if model.n_regimes == 2:
        grid = Grid1D(settings.n_space, settings.n_time, model.horizon)
        problem = solve_both(model, grid)
        policy = _load_policy(policy_file, model, problem.policy_field())
        w0 = float(np.interp(model.p0[0], grid.p, problem.w.values[0]))
        reference = model.v0**g / g * float(np.exp(w0))
    else:
        policy = _load_policy(policy_file, model, vcfg.get("policy", [0.5, 0.5]))
    nodes = _nodes(cfg, model) if problem is not None else []

    config = ExperimentConfig(model, policy, n_paths=max(settings.n_paths, 100), dt=settings.dt,
                              seed=settings.seed, workers=settings.workers)
    res = simulate_historical(model, policy, config.n_paths, config.dt, config.seed,
                              track_unnormalized=True, workers=settings.workers)
    filt, _ = filter_identity_suite(config, result=res)
    report.extend(filt)
    crit, _ = criterion_report(config, reference=reference, result=res)
    report.extend(crit)
    if problem is not None:
        sm = supermartingale_test(
            model, problem, nodes,
            n_paths=int(vcfg.get("supermartingale_paths", 4000)),
            dt=settings.dt, seed=settings.seed, policy=policy,
        )
        report.extend(sm)
    else:
        report.add(CheckResult("supermartingale skipped", 0.0, 0.0, 0.0, True,
                               "needs the two-regime grid solution"))
    report.write_csv(out / "report.csv")
    print(report.summary())
    return EXIT_OK if report.passed else EXIT_VERIFY


def cmd_feynman_kac(model: MarketModel, cfg: dict, settings: RunSettings, out: Path) -> int:
    """Post-default ``psi`` at ``(0, p0)`` by Monte Carlo, for any regime count."""
    _steps(model.horizon, settings.dt)
    x0 = model.p0[:-1]
    est = feynman_kac_estimate(post_default_bundle(model), 0.0, model.horizon, x0,
                               settings.n_paths, settings.seed, settings.dt)
    g = model.gamma
    N = model.n_regimes
    io.write_rows(out / "fk.csv",
                  ["t"] + [f"p_{i + 1}" for i in range(N - 1)] + ["psi_post", "se", "n_paths"],
                  [(0.0, *map(float, x0), est.value, est.se, est.n_paths)])
    io.write_json(out / "summary.json", {
        "model_hash": model.model_hash(),
        "psi_post_at_p0": est.value,
        "se": est.se,
        "w_post_at_p0": float((1.0 - g) * np.log(est.value)),
        "n_paths": est.n_paths,
        "dt": settings.dt,
        "seed": settings.seed,
    })
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser and dispatch
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, metavar="PATH", help="JSON run configuration")
    common.add_argument("--out", required=True, metavar="DIR", help="output directory (created)")
    common.add_argument("--seed", type=int, metavar="U64", help="master seed (default: config or 0)")
    common.add_argument("--workers", type=int, default=1, metavar="N",
                        help="worker processes for path simulation (default 1, the reproducible mode)")
    common.add_argument("--dt", type=float, metavar="F", help="simulation time step (default 1e-3)")
    common.add_argument("--np", type=int, metavar="N_SPACE", help="PDE nodes in p (default 201)")
    common.add_argument("--nt", type=int, metavar="N_TIME", help="PDE time steps (default 1000)")
    common.add_argument("--paths", type=int, metavar="N",
                        help="Monte Carlo paths (simulate default 100, others 1000)")

    parser = argparse.ArgumentParser(
        prog="hiddenregime",
        description="Hidden regime-switching portfolio problem with a defaultable security.",
        epilog="Exit codes: 0 success, 1 verification failure, 2 input error, 3 numerical failure.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common],
                   help="solve the post- and pre-default equations (two regimes)")
    sim = sub.add_parser("simulate", parents=[common], help="simulate historical paths to CSV")
    sim.add_argument("--policy", metavar="FILE", help="policy.csv from solve (default: constant)")
    ver = sub.add_parser("verify", parents=[common], help="run the Monte Carlo verification suite")
    ver.add_argument("--policy", metavar="FILE", help="policy.csv to verify instead of the solved one")
    sub.add_parser("feynman-kac", parents=[common],
                   help="Monte Carlo post-default value for any number of regimes")
    return parser


def run(args) -> int:
    cfg, model = load_inputs(args.config)
    settings = resolve_settings(args, cfg)
    if args.command == "solve":
        _require_two_regimes(model, "solve")
    policy = None
    if args.command == "simulate":
        fallback = cfg.get("simulation", {}).get("policy", [0.5, 0.5])
        policy = _load_policy(args.policy, model, fallback)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create output directory {out}: {exc}")
    manifest = RunManifest(
        command=args.command,
        config=str(args.config),
        seed=settings.seed,
        grid={"n_space": settings.n_space, "n_time": settings.n_time, "dt": settings.dt,
              "n_paths": settings.n_paths, "workers": settings.workers},
        out=str(out),
        model_hash=model.model_hash(),
        outputs=list(OUTPUTS[args.command]),
    )
    manifest.write(out)

    if args.command == "solve":
        code = cmd_solve(model, cfg, settings, out)
    elif args.command == "simulate":
        code = cmd_simulate(model, cfg, settings, out, policy)
    elif args.command == "verify":
        code = cmd_verify(model, cfg, settings, out, args.policy)
    else:
        code = cmd_feynman_kac(model, cfg, settings, out)

    missing = manifest.missing_outputs(out)
    if missing:
        print(f"error: outputs not produced: {', '.join(missing)}", file=sys.stderr)
        return EXIT_NUMERIC
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return run(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (HiddenRegimeError, FloatingPointError, ArithmeticError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
