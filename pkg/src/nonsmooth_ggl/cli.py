"""Experiment runner.

Usage:

    nonsmooth-ggl run --config run.txt
    nonsmooth-ggl run --preset fig3_eps01 [--full] [--out DIR]
    nonsmooth-ggl list-presets

Each run writes a trajectory file (CSV or JSON) and a JSON summary next
to it.  Exit codes: 0 on success, 1 on I/O failure, 2 if any step was
flagged non-converged (files are still written).  Preset sweeps run their
members in parallel; NONSMOOTH_GGL_THREADS caps the worker count.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .bilateral import BilateralStepper
from .config import ConfigError, RunConfig, parse_config, preset, preset_names
from .diagnostics import TrajectoryRecord, penetration_stats
from .models import (
    BilateralSliderCrank,
    BouncingBall,
    BouncingBallParams,
    UnilateralSliderCrank,
)
from .simulate import run_simulation
from .steppers import DecoupledGGLStepper, MoreauStepper, SolverConfig
from .unified import ReferenceStepper, UnifiedStepper

__all__ = ["build_model", "build_stepper", "run_experiment", "main"]

_DAE_LEVELS = {
    "dae_pos": "position",
    "dae_vel": "velocity",
    "dae_acc": "acceleration",
    "dae_ggl": "ggl",
}

_COLUMNS = {
    "slider_unilateral": (
        "t,theta1,theta2,theta3,omega1,omega2,omega3,"
        "g1,g2,g3,g4,gd1,gd2,gd3,gd4,L1,L2,L3,L4,P1,P2,P3,P4,"
        "E,active_mask,newton_iters"
    ),
    "slider_bilateral": "t,theta1,theta2,omega1,omega2,g,gd,lambda,psi,E,newton_iters",
    "ball": "t,q,v,g,gd,L,P,E,active,newton_iters",
}


def build_model(cfg: RunConfig):
    eps = cfg.epsilon
    if cfg.model == "slider_unilateral":
        values = eps * 4 if len(eps) == 1 else eps
        return UnilateralSliderCrank(eps=np.array(values))
    if cfg.model == "slider_bilateral":
        return BilateralSliderCrank()
    return BouncingBall(BouncingBallParams(eps=eps[0]))


def build_stepper(cfg: RunConfig, model):
    r_mode, r_scale = cfg.r_mode, 1.0
    if r_mode not in ("delassus", "unit"):
        r_mode, r_scale = "scalar", float(cfg.r_mode)
    solver = SolverConfig(
        dt=cfg.dt,
        newton_tol=cfg.newton_tol,
        max_iter=cfg.max_iter,
        active_tol=cfg.active_tol,
        scheme=cfg.scheme,
        r_mode=r_mode,
        r_scale=r_scale,
    )
    if cfg.scheme == "moreau":
        return MoreauStepper(model, solver)
    if cfg.scheme == "ggl_decoupled":
        return DecoupledGGLStepper(model, solver)
    if cfg.scheme == "ggl_unified":
        return UnifiedStepper(model, solver)
    if cfg.scheme == "ggl_reference":
        return ReferenceStepper(model, solver)
    return BilateralStepper(model, solver, scheme=_DAE_LEVELS[cfg.scheme])


def _row_values(cfg: RunConfig, rec: TrajectoryRecord, i: int) -> list:
    row = [rec.times[i], *rec.qs[i], *rec.vs[i], *rec.gaps[i], *rec.gap_velocities[i]]
    if cfg.model == "slider_unilateral":
        row += [*rec.lambdas[i], *rec.psis[i], rec.energies[i]]
        row += [int(rec.active_mask[i]), int(rec.newton_iters[i])]
    elif cfg.model == "slider_bilateral":
        row += [rec.lambdas[i, 0], rec.psis[i, 0], rec.energies[i]]
        row += [int(rec.newton_iters[i])]
    else:
        row += [rec.lambdas[i, 0], rec.psis[i, 0], rec.energies[i]]
        row += [int(rec.active_mask[i]), int(rec.newton_iters[i])]
    return row


def _format_cell(value) -> str:
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


def write_trajectory(cfg: RunConfig, rec: TrajectoryRecord, path: Path) -> None:
    indices = range(0, len(rec), cfg.record_stride)
    if cfg.format == "csv":
        lines = [_COLUMNS[cfg.model]]
        for i in indices:
            lines.append(",".join(_format_cell(v) for v in _row_values(cfg, rec, i)))
        path.write_text("\n".join(lines) + "\n")
    else:
        payload = {
            "columns": _COLUMNS[cfg.model].split(","),
            "rows": [
                [
                    int(v) if isinstance(v, int) else float(v)
                    for v in _row_values(cfg, rec, i)
                ]
                for i in indices
            ],
        }
        path.write_text(json.dumps(payload) + "\n")


def summarize(cfg: RunConfig, rec: TrajectoryRecord, wall_time: float) -> dict:
    stats = penetration_stats(rec)
    iters = rec.newton_iters[1:]
    histogram = {
        str(int(k)): int(np.count_nonzero(iters == k)) for k in np.unique(iters)
    }
    return {
        "name": cfg.name,
        "model": cfg.model,
        "scheme": cfg.scheme,
        "dt": cfg.dt,
        "t_end": cfg.t_end,
        "epsilon": list(cfg.epsilon),
        "n_steps": len(rec) - 1,
        "min_gap": stats.min_gap,
        "violation_time": stats.violation_time,
        "per_contact_min": [float(g) for g in stats.per_contact_min],
        "E0": float(rec.energies[0]),
        "E_end": float(rec.energies[-1]),
        "max_energy_jump": float(np.max(np.diff(rec.energies))),
        "newton_iters_histogram": histogram,
        "max_newton_iters": int(rec.newton_iters.max()),
        "flagged_steps": int(np.count_nonzero(~rec.converged)),
        "wall_time_s": wall_time,
    }


def run_experiment(cfg: RunConfig, out_dir: str | None = None) -> int:
    """Simulate one configuration and write trajectory plus summary.

    Returns 0 on full convergence, 2 if any step was flagged, 1 on I/O
    failure.
    """
    model = build_model(cfg)
    stepper = build_stepper(cfg, model)
    state0 = model.initial_state()
    start = time.perf_counter()
    rec = run_simulation(model, stepper, state0, cfg.n_steps)
    wall = time.perf_counter() - start

    directory = Path(out_dir if out_dir is not None else cfg.out)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        write_trajectory(cfg, rec, directory / f"{cfg.name}.{cfg.format}")
        summary = summarize(cfg, rec, wall)
        (directory / f"{cfg.name}_summary.json").write_text(
            json.dumps(summary, indent=2, sort_keys=True) + "\n"
        )
    except OSError as exc:
        print(f"error: cannot write results: {exc}", file=sys.stderr)
        return 1
    return 2 if np.count_nonzero(~rec.converged) else 0


def _thread_cap(n_runs: int) -> int:
    env = os.environ.get("NONSMOOTH_GGL_THREADS")
    if env is not None:
        try:
            cap = int(env)
        except ValueError:
            cap = 1
        return max(1, min(cap, n_runs))
    return max(1, min(n_runs, os.cpu_count() or 1))


def _run_many(configs, out_dir) -> int:
    if len(configs) == 1:
        return run_experiment(configs[0], out_dir)
    with ThreadPoolExecutor(max_workers=_thread_cap(len(configs))) as pool:
        codes = list(pool.map(lambda c: run_experiment(c, out_dir), configs))
    if 1 in codes:
        return 1
    return 2 if 2 in codes else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="nonsmooth-ggl",
        description="Timestepping experiments for impacting mechanical systems",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_parser = sub.add_parser("run", help="execute one run or a preset sweep")
    source = run_parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--config", help="path to a key=value run configuration")
    source.add_argument("--preset", help="name of a predefined experiment")
    run_parser.add_argument(
        "--full", action="store_true", help="use the long preset horizon"
    )
    run_parser.add_argument("--out", help="output directory (default: config 'out')")

    sub.add_parser("list-presets", help="print the available preset names")

    args = parser.parse_args(argv)

    if args.command == "list-presets":
        for name in preset_names():
            print(name)
        return 0

    try:
        if args.config is not None:
            text = Path(args.config).read_text()
            configs = [parse_config(text)]
        else:
            configs = preset(args.preset, full=args.full)
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    if args.out is not None:
        configs = [replace(c, out=args.out) for c in configs]
    return _run_many(configs, args.out)


if __name__ == "__main__":
    sys.exit(main())
