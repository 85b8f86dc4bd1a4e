"""Command-line interface: density curves, simulation, validation, inference.

Every subcommand reads JSON/CSV inputs, writes CSV/JSON artifacts, and drops
a run manifest next to each output so results can be reproduced (same seed,
config and versions give byte-identical data payloads).  Exit codes: 0 on
success, 2 on configuration/validation errors, 3 on numerical failures.
"""

from __future__ import annotations

import argparse
import json
import os
import platform
import sys
import tempfile
import time
from typing import Optional

import numpy as np

from . import __version__
from .engine import EngineConfig
from .kernels import NonConvergedSeries
from .model import InvalidScheduleError, schedule_from_dict, validate_schedule
from .modelspec import Problem, parse_model_config
from .simulate import SimConfig, histogram_csv, ks_test, simulate_fpt

DEFAULT_GRID_POINTS = 2048


class ConfigError(ValueError):
    pass


def _atomic_write(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_manifest(output: str, args: argparse.Namespace, command: str, t0: float, outputs: list[str]) -> None:
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "config": getattr(args, "config", None) or getattr(args, "schedule", None)
        or getattr(args, "trials", None),
        "seed": getattr(args, "seed", None),
        "threads": getattr(args, "threads", None),
        "versions": {
            "fptlik": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
        "wall_clock_s": round(time.perf_counter() - t0, 6),
        "outputs": outputs,
    }
    _atomic_write(output + ".manifest.json", json.dumps(manifest, indent=2) + "\n")


def _load_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON (line {exc.lineno}: {exc.msg})") from None


def _load_problem(path: str) -> Problem:
    from .modelspec import multistage_problem

    config = _load_json(path)
    if "model" in config:
        return parse_model_config(config)
    # bare schedule file
    s = schedule_from_dict(config)
    violations = validate_schedule(s)
    if violations:
        raise ConfigError("; ".join(str(v) for v in violations))
    return multistage_problem(s)


def _engine_config(args: argparse.Namespace) -> EngineConfig:
    return EngineConfig(interior_order=args.quad_order, final_order=args.final_quad_order)


def _parse_grid(spec: Optional[str], horizon: float) -> np.ndarray:
    if not spec:
        return np.linspace(horizon / DEFAULT_GRID_POINTS, horizon, DEFAULT_GRID_POINTS)
    try:
        lo, hi, n = spec.split(":")
        lo, hi, n = float(lo), float(hi), int(n)
    except ValueError:
        raise ConfigError(f"grid spec must be 'start:stop:count', got {spec!r}") from None
    if not (0 <= lo < hi and n >= 2):
        raise ConfigError(f"invalid grid range {spec!r}")
    grid = np.linspace(lo, hi, n)
    return grid[grid > 0]


def cmd_density(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    prob = _load_problem(args.config)
    cfg = _engine_config(args)
    grid = _parse_grid(args.grid, prob.horizon)
    if args.dry_run:
        print(f"config ok: {prob.name}, horizon {prob.horizon}, {prob.schedule.n_stages} stages")
        return 0
    ev = prob.evaluator(cfg)
    f_u, f_l = prob.density_curve(grid, ev)
    q = prob.npp(ev)
    lines = []
    if args.signed_time:
        lines.append("t,f")
        for t, f in zip(-grid[::-1], f_l[::-1]):
            lines.append(f"{float(t)!r},{float(f)!r}")
        for t, f in zip(grid, f_u):
            lines.append(f"{float(t)!r},{float(f)!r}")
    else:
        lines.append("t,f_upper,f_lower")
        for t, fu, fl in zip(grid, f_u, f_l):
            lines.append(f"{float(t)!r},{float(fu)!r},{float(fl)!r}")
    lines.append(f"# NPP {float(q)!r}")
    _atomic_write(args.output, "\n".join(lines) + "\n")
    _write_manifest(args.output, args, "density", t0, [args.output])
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    prob = _load_problem(args.config)
    sim_cfg = SimConfig(step=args.step, n_paths=args.n_paths, seed=args.seed)
    if args.dry_run:
        print(f"config ok: {prob.name}, {args.n_paths} paths at step {args.step}")
        return 0
    samples = simulate_fpt(prob.sim, sim_cfg)
    samples.to_csv(args.output)
    outputs = [args.output]
    if args.histogram:
        histogram_csv(samples, args.histogram, bins=args.bins)
        outputs.append(args.histogram)
    _write_manifest(args.output, args, "simulate", t0, outputs)
    return 0


def cmd_kstest(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    prob = _load_problem(args.config)
    cfg = _engine_config(args)
    if args.dry_run:
        print(f"config ok: {prob.name}")
        return 0
    samples = simulate_fpt(prob.sim, SimConfig(step=args.step, n_paths=args.n_paths, seed=args.seed))
    result = ks_test(samples, prob.evaluator(cfg), time_map=prob.time_map())
    report = {
        "statistic": result.statistic,
        "p_value": result.p_value,
        "n_used": result.n_used,
        "n_excluded": result.n_excluded,
        "alpha": args.alpha,
        "rejected": result.rejected(args.alpha),
        "step": args.step,
        "n_paths": args.n_paths,
    }
    _atomic_write(args.output, json.dumps(report, indent=2) + "\n")
    _write_manifest(args.output, args, "kstest", t0, [args.output])
    return 0


def _load_params(path: str):
    from .inference import AddmParams

    d = _load_json(path)
    try:
        return AddmParams(**{k: float(d[k]) for k in ("eta", "kappa", "a", "b", "x0")})
    except KeyError as exc:
        raise ConfigError(f"parameter file {path} missing key {exc}") from None


def cmd_loglik(args: argparse.Namespace) -> int:
    from .inference import dataset_loglik_detailed, read_trials_csv

    t0 = time.perf_counter()
    trials = read_trials_csv(args.trials)
    params = _load_params(args.params)
    cfg = _engine_config(args)
    if args.dry_run:
        print(f"config ok: {len(trials)} trials")
        return 0
    res = dataset_loglik_detailed(trials, params, cfg, horizon=args.horizon, n_workers=args.threads)
    out = {
        "loglik": res.value,
        "n_trials": len(trials),
        "n_zero_density": res.n_zero,
        "zero_density_trials": res.zero_trials.tolist()[:100],
    }
    _atomic_write(args.output, json.dumps(out, indent=2) + "\n")
    _write_manifest(args.output, args, "loglik", t0, [args.output])
    return 0


def cmd_fit(args: argparse.Namespace) -> int:
    from .inference import bootstrap_ci, fit_mle, read_trials_csv

    t0 = time.perf_counter()
    trials = read_trials_csv(args.trials)
    init = _load_params(args.init)
    bounds = _load_json(args.bounds) if args.bounds else None
    if bounds:
        bounds = {k: tuple(v) for k, v in bounds.items()}
    free = tuple(args.free.split(",")) if args.free else ("eta", "kappa", "a", "b", "x0")
    cfg = _engine_config(args)
    if args.dry_run:
        print(f"config ok: {len(trials)} trials, free={free}")
        return 0
    fit = fit_mle(trials, init, bounds, free, cfg, horizon=args.horizon, n_workers=args.threads)
    out = {
        "estimate": {k: getattr(fit.params, k) for k in ("eta", "kappa", "a", "b", "x0")},
        "loglik": fit.loglik,
        "iterations": fit.iterations,
        "n_evals": fit.n_evals,
        "converged": fit.converged,
        "free": list(free),
    }
    if args.bootstrap:
        boot = bootstrap_ci(
            trials, fit.params, n_resamples=args.bootstrap, level=args.level, seed=args.seed,
            free=free, bounds=bounds, cfg=cfg, horizon=args.horizon, n_workers=args.threads,
        )
        out["intervals"] = {k: list(v) for k, v in boot.intervals.items()}
        out["bootstrap_failures"] = boot.n_failed
    _atomic_write(args.output, json.dumps(out, indent=2) + "\n")
    _write_manifest(args.output, args, "fit", t0, [args.output])
    return 0


def cmd_mcmc(args: argparse.Namespace) -> int:
    from .inference import mcmc_sample, read_trials_csv

    t0 = time.perf_counter()
    trials = read_trials_csv(args.trials)
    init = _load_params(args.init)
    free = tuple(args.free.split(",")) if args.free else ("eta", "kappa", "a", "b", "x0")
    cfg = _engine_config(args)
    if args.dry_run:
        print(f"config ok: {len(trials)} trials, free={free}")
        return 0
    res = mcmc_sample(
        trials, None, init, n_burn=args.burn, n_draws=args.draws,
        proposal_scale=args.scale, seed=args.seed, free=free, cfg=cfg,
        horizon=args.horizon, n_workers=args.threads, thin=args.thin,
    )
    lines = [",".join(res.free)]
    for row in res.chain:
        lines.append(",".join(repr(float(v)) for v in row))
    _atomic_write(args.output, "\n".join(lines) + "\n")
    summary = {
        "acceptance_rate": res.acceptance_rate,
        "n_draws": int(res.chain.shape[0]),
        "posterior_mean": {k: float(m) for k, m in zip(res.free, res.posterior_mean())},
        "posterior_sd": {k: float(sd) for k, sd in zip(res.free, res.posterior_sd())},
    }
    _atomic_write(args.output + ".summary.json", json.dumps(summary, indent=2) + "\n")
    _write_manifest(args.output, args, "mcmc", t0, [args.output, args.output + ".summary.json"])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fptlik",
        description="First passage time densities and inference for drift diffusion models",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed_default=0):
        p.add_argument("--threads", type=int, default=1, help="worker processes for trial evaluation")
        p.add_argument("--seed", type=int, default=seed_default)
        p.add_argument("--quad-order", type=int, default=30, help="interior-stage quadrature order")
        p.add_argument("--final-quad-order", type=int, default=50, help="final-stage quadrature order")
        p.add_argument("--dry-run", action="store_true", help="validate configuration and exit")

    p = sub.add_parser("density", help="export passage density curves and the non-passage probability")
    p.add_argument("--config", required=True, help="schedule JSON or model config JSON")
    p.add_argument("--grid", help="time grid as start:stop:count (default 2048 points to the horizon)")
    p.add_argument("--output", required=True)
    p.add_argument("--signed-time", action="store_true",
                   help="emit lower-boundary densities at negative times")
    common(p)
    p.set_defaults(func=cmd_density)

    p = sub.add_parser("simulate", help="sample first passage times by Euler-Maruyama")
    p.add_argument("--config", required=True)
    p.add_argument("--n-paths", type=int, default=10000)
    p.add_argument("--step", type=float, default=1e-4)
    p.add_argument("--output", required=True)
    p.add_argument("--histogram", help="also write a normalized histogram CSV")
    p.add_argument("--bins", type=int, default=100)
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("kstest", help="one-sample KS test of simulated exits against computed densities")
    p.add_argument("--config", required=True)
    p.add_argument("--n-paths", type=int, default=10000)
    p.add_argument("--step", type=float, default=1e-4)
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--output", required=True)
    common(p)
    p.set_defaults(func=cmd_kstest)

    p = sub.add_parser("loglik", help="dataset log likelihood at fixed parameters")
    p.add_argument("--trials", required=True, help="trials CSV (trial_id, rt, choice, covariates)")
    p.add_argument("--params", required=True, help="parameter JSON (eta, kappa, a, b, x0)")
    p.add_argument("--horizon", type=float, default=None)
    p.add_argument("--output", required=True)
    common(p)
    p.set_defaults(func=cmd_loglik)

    p = sub.add_parser("fit", help="maximum likelihood estimation")
    p.add_argument("--trials", required=True)
    p.add_argument("--init", required=True, help="initial parameter JSON")
    p.add_argument("--bounds", help="bounds JSON: {name: [lo, hi]}")
    p.add_argument("--free", help="comma-separated free parameters (default: all)")
    p.add_argument("--horizon", type=float, default=None)
    p.add_argument("--bootstrap", type=int, default=0, help="bootstrap resamples for intervals")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--output", required=True)
    common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("mcmc", help="random-walk posterior sampling")
    p.add_argument("--trials", required=True)
    p.add_argument("--init", required=True)
    p.add_argument("--draws", type=int, default=1000)
    p.add_argument("--burn", type=int, default=200)
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--scale", type=float, default=0.02, help="proposal standard deviation")
    p.add_argument("--free", help="comma-separated free parameters (default: all)")
    p.add_argument("--horizon", type=float, default=None)
    p.add_argument("--output", required=True)
    common(p)
    p.set_defaults(func=cmd_mcmc)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InvalidScheduleError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NonConvergedSeries as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
