"""Command-line entry point.

Every subcommand reads an experiment config (JSON), writes its outputs into a
fresh run directory under ``--out`` (default ``$TELEGRAPH_HMM_OUT`` or
``./runs``) together with a ``manifest.json``, and prints the run directory.

Exit status: 0 on success, 2 on a config or validation error, 1 on a
runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .experiments import aggregate, run_records
from .filter import FilterError, run_filter, run_filter_with_sensitivities
from .fisher import QuadratureError, fisher_by_ergodic_average, invariant_density
from .mle import (
    PROCESS_CSV_COLUMNS,
    ConfigError,
    EstimationError,
    one_step_process,
    process_rows,
    two_step_process,
)
from .model import ModelValidationError, ThetaParams, validate_model
from .moments import MOMENT_CSV_COLUMNS, estimate_moments
from .simulate import GridError, simulate_path

OUT_ENV = "TELEGRAPH_HMM_OUT"
log = logging.getLogger("telegraph_hmm")


class UsageError(Exception):
    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


def _default_out() -> str:
    return os.environ.get(OUT_ENV, "runs")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="telegraph-hmm",
        description="Simulation, filtering and rate estimation for a telegraph signal in white noise.",
        epilog=f"Output directory defaults to ${OUT_ENV} if set, else ./runs.",
    )
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def common(sp, seed=True):
        sp.add_argument("--config", required=True, help="experiment config (JSON)")
        sp.add_argument("--out", default=None, help="parent directory for the run directory")
        if seed:
            sp.add_argument("--seed", type=int, default=None, help="override base_seed")

    sp = sub.add_parser("simulate", help="simulate one observation path -> path.csv")
    common(sp)
    sp.add_argument("--horizon", type=float, default=None, help="T (default: largest config horizon)")
    sp.add_argument("--keep-hidden", action="store_true", help="also write the hidden integrals")

    sp = sub.add_parser("filter", help="run the filter on a path -> filter.csv")
    common(sp, seed=False)
    sp.add_argument("--path", required=True, help="observation path CSV")
    sp.add_argument("--theta", type=float, nargs=2, metavar=("LAMBDA", "MU"),
                    help="rates to filter at (default: config theta)")
    sp.add_argument("--sensitivities", action="store_true", help="also write d pi / d theta")
    sp.add_argument("--step", type=float, default=None, help="grid step if it cannot be inferred")

    sp = sub.add_parser("estimate", help="estimate the rates from a path")
    common(sp, seed=False)
    sp.add_argument("--path", required=True, help="observation path CSV")
    sp.add_argument("--method", choices=("moments", "one-step", "two-step"), default="moments")
    sp.add_argument("--step", type=float, default=None, help="grid step if it cannot be inferred")

    sp = sub.add_parser("mc", help="Monte Carlo study -> records.csv, report.json, qq_data.csv")
    common(sp)
    sp.add_argument("--workers", type=int, default=1, help="worker processes (results are identical)")
    sp.add_argument("--replications", type=int, default=None, help="override M")

    sp = sub.add_parser("fisher", help="ergodic Fisher information at theta0 -> fisher.json")
    common(sp)
    sp.add_argument("--horizon", type=float, default=1e4, help="simulation length")
    sp.add_argument("--burn-in", type=float, default=0.1, help="discarded fraction")

    sp = sub.add_parser("density", help="invariant density of the filter -> density.csv")
    common(sp, seed=False)
    sp.add_argument("--points", type=int, default=199, help="interior grid points in (0, 1)")
    return p


def _load(args):
    cfg = io.load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, base_seed=args.seed)
    validate_model(cfg.model)
    return cfg


def _run_dir(args, tag):
    return io.make_run_dir(args.out or _default_out(), tag)


def _cmd_simulate(args):
    cfg = _load(args)
    T = args.horizon if args.horizon is not None else max(cfg.horizons)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.base_seed))
    _, path = simulate_path(cfg.model, T, cfg.step, rng, keep_hidden=args.keep_hidden)
    run = _run_dir(args, "simulate")
    io.write_path_csv(run / "path.csv", path)
    io.write_manifest(run, "simulate", io.config_to_dict(cfg), seed=cfg.base_seed,
                      extra={"horizon": T})
    return run


def _cmd_filter(args):
    cfg = _load(args)
    path = io.read_path_csv(args.path, args.step)
    theta = ThetaParams(*args.theta) if args.theta else cfg.model.theta
    states = cfg.model.states
    if args.sensitivities:
        traj = run_filter_with_sensitivities(theta, states, path)
        cols = io.FILTER_CSV_COLUMNS_SENS
        data = (traj.pi, traj.dpi_dlambda, traj.dpi_dmu)
    else:
        traj = run_filter(theta, states, path)
        cols = io.FILTER_CSV_COLUMNS
        data = (traj.pi,)
    k = np.arange(traj.pi.size)
    run = _run_dir(args, "filter")
    io.write_csv(run / "filter.csv", cols, zip(k, k * path.step, *data))
    io.write_manifest(run, "filter", io.config_to_dict(cfg),
                      extra={"path": str(args.path), "theta": [theta.lam, theta.mu],
                             "n_clamped": traj.n_clamped})
    if traj.n_clamped:
        log.warning("filter clamped at %d steps", traj.n_clamped)
    return run


def _cmd_estimate(args):
    cfg = _load(args)
    path = io.read_path_csv(args.path, args.step)
    spec = cfg.model
    run = None
    if args.method == "moments":
        est = estimate_moments(path, spec.states, spec.domain)
        run = _run_dir(args, "estimate")
        io.write_csv(run / "estimate.csv", MOMENT_CSV_COLUMNS, [est.csv_row()])
    else:
        runner = one_step_process if args.method == "one-step" else two_step_process
        proc = runner(path, spec.states, spec.domain, cfg.estimation_config(args.method))
        run = _run_dir(args, "estimate")
        io.write_csv(run / "process.csv", PROCESS_CSV_COLUMNS, process_rows(proc))
    io.write_manifest(run, "estimate", io.config_to_dict(cfg),
                      extra={"path": str(args.path), "method": args.method})
    return run


def _cmd_mc(args):
    cfg = _load(args)
    if args.replications is not None:
        cfg = replace(cfg, replications=args.replications)
    if args.workers < 1:
        raise UsageError("--workers must be >= 1", "--workers")
    records = run_records(cfg, args.workers)
    report = aggregate(cfg, records)
    for note in report.warnings:
        log.warning(note)
    return io.write_mc_run(args.out or _default_out(), cfg, records, report)


def _cmd_fisher(args):
    cfg = _load(args)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.base_seed))
    fi = fisher_by_ergodic_average(cfg.model.theta, cfg.model.states, args.horizon, cfg.step,
                                   rng, args.burn_in, cfg.model.domain)
    run = _run_dir(args, "fisher")
    io.write_json(run / "fisher.json", {
        "theta0": [cfg.model.theta.lam, cfg.model.theta.mu],
        "matrix": fi.matrix, "eigenvalues": fi.eigenvalues,
        "split_half_discrepancy": fi.split_half_discrepancy(),
        "horizon": fi.horizon, "step": fi.step, "burn_in": fi.burn_in,
    })
    io.write_manifest(run, "fisher", io.config_to_dict(cfg), seed=cfg.base_seed,
                      extra={"horizon": args.horizon, "burn_in": args.burn_in})
    return run


def _cmd_density(args):
    cfg = _load(args)
    if args.points < 1:
        raise UsageError("--points must be >= 1", "--points")
    den = invariant_density(cfg.model.theta, cfg.model.states)
    x, f = den.table(args.points)
    run = _run_dir(args, "density")
    io.write_csv(run / "density.csv", io.DENSITY_CSV_COLUMNS, zip(x, f))
    io.write_manifest(run, "density", io.config_to_dict(cfg),
                      extra={"log_normalizer": den.log_normalizer})
    return run


_COMMANDS = {
    "simulate": _cmd_simulate, "filter": _cmd_filter, "estimate": _cmd_estimate,
    "mc": _cmd_mc, "fisher": _cmd_fisher, "density": _cmd_density,
}

_VALIDATION_ERRORS = (io.SchemaError, ModelValidationError, ConfigError, GridError, UsageError)
_RUNTIME_ERRORS = (EstimationError, FilterError, QuadratureError, RuntimeError,
                   ArithmeticError, OSError, ValueError)


def parse_and_dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s: %(message)s")
    try:
        if not Path(args.config).is_file():
            raise UsageError(f"config file not found: {args.config}", "--config")
        for attr in ("path",):
            val = getattr(args, attr, None)
            if val is not None and not Path(val).is_file():
                raise UsageError(f"path file not found: {val}", "--path")
        run = _COMMANDS[args.command](args)
    except _VALIDATION_ERRORS as exc:
        field = getattr(exc, "field", None)
        where = f" [{field}]" if field else ""
        print(f"error{where}: {exc}", file=sys.stderr)
        return 2
    except _RUNTIME_ERRORS as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(run)
    return 0


def main() -> None:
    sys.exit(parse_and_dispatch())


if __name__ == "__main__":
    main()
