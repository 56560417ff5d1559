"""Command line front end.

Subcommands: ``simulate`` runs a Monte Carlo campaign from a config
file, ``fit-predict`` fits on a dataset CSV and predicts at query
points, ``diagnose`` evaluates the error-bound quantities for a
clean/noisy covariate pair, and ``verify-lemmas`` stress-tests the
matrix identities on random instances.

Exit codes: 0 success, 2 config or schema error, 3 solver failure,
4 verification failure. Worker count for simulations comes from the
FRECHET_SVT_THREADS environment variable (default: logical cores).
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dataio import (
    ConfigError,
    SchemaError,
    load_sim_configs,
    read_covariates,
    read_dataset,
    write_diagnostics_csv,
    write_manifest,
    write_predictions,
    write_profile_csv,
    write_results_csv,
)
from .diagnostics import (
    GrowthConstants,
    bias_term,
    denoising_report_for,
    signal_floor,
    snr_reciprocal,
    weight_stability_check,
)
from .metric_spaces import ConvergenceError, DegenerateWeightsError, WassersteinSpace
from .regression import Dataset, covariate_stats, fit
from .simulation import TrialFailure, lambda_grid, run_campaign, tune_lambda
from .verification import run_suite

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_VERIFY = 4

THREADS_ENV = "FRECHET_SVT_THREADS"


def _worker_count() -> int:
    raw = os.environ.get(THREADS_ENV, "").strip()
    if raw:
        try:
            return max(1, int(raw))
        except ValueError as exc:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from exc
    return os.cpu_count() or 1


def _cmd_simulate(args) -> int:
    configs, snapshot = load_sim_configs(args.config, args.seed, args.grid_points)
    out = Path(args.out)
    write_manifest(
        out,
        "simulate",
        __version__,
        {
            "config": args.config,
            "seed": configs[0].master_seed,
            "out": str(out),
            "workers_env": os.environ.get(THREADS_ENV, ""),
        },
        snapshot,
    )
    results = run_campaign(configs, workers=_worker_count())
    write_results_csv(out / "results.csv", results)
    write_profile_csv(out / "profile.csv", results)
    for cell in results:
        mspe = cell.report.mspe
        print(
            f"cell {cell.config.display_name()}: "
            f"MSPE REF={mspe['REF']:.4f} EIV={mspe['EIV']:.4f} SVT={mspe['SVT']:.4f} "
            f"(median lambda_hat={cell.lambda_hat_median:.4f})"
        )
    print(f"wrote {out / 'results.csv'} and {out / 'profile.csv'}")
    return EXIT_OK


def _parse_lambda(text: str) -> float | None:
    """A nonnegative threshold, or None meaning tune on a holdout."""
    if text == "auto":
        return None
    try:
        value = float(text)
    except ValueError as exc:
        raise ConfigError(f"--lambda must be a number or 'auto', got {text!r}") from exc
    if value < 0:
        raise ConfigError("--lambda must be nonnegative")
    return value


def _cmd_fit_predict(args) -> int:
    lam = _parse_lambda(args.lam)
    x, responses, space = read_dataset(args.train, args.kind)
    if x is None:
        raise SchemaError(f"{args.train}: training file has no covariate columns")
    train = Dataset(x, responses, space)
    queries = read_covariates(args.queries)
    if queries.shape[1] != x.shape[1]:
        raise SchemaError(
            f"queries have {queries.shape[1]} covariates but training data has {x.shape[1]}"
        )
    out = Path(args.out)
    write_manifest(
        out,
        "fit-predict",
        __version__,
        {
            "train": args.train,
            "queries": args.queries,
            "kind": args.kind,
            "lambda": args.lam,
            "holdout": args.holdout or "",
            "out": str(out),
        },
    )
    lam_hat = None
    if lam is None:
        if not args.holdout:
            raise ConfigError("--lambda auto requires --holdout CSV")
        hx, hy, _ = read_dataset(args.holdout, args.kind)
        if hx is None:
            raise SchemaError(f"{args.holdout}: holdout file has no covariate columns")
        holdout = Dataset(hx, hy, space)
        stats = covariate_stats(x)
        grid = lambda_grid(stats.eigenvalues[0], x.shape[1], x.shape[0], args.grid_points)
        lam_hat = tune_lambda(train, holdout, grid)
        lam = lam_hat
    model = fit(train, lam)
    preds = model.predict_many(queries)
    grid_levels = space.grid if isinstance(space, WassersteinSpace) else None
    write_predictions(out / "predictions.csv", args.kind, preds, grid=grid_levels, lambda_hat=lam_hat)
    print(f"wrote {out / 'predictions.csv'}" + (f" (lambda_hat={lam_hat!r})" if lam_hat is not None else ""))
    return EXIT_OK


def _cmd_diagnose(args) -> int:
    x, responses, space = read_dataset(args.train, args.kind)
    if x is None:
        raise SchemaError(f"{args.train}: training file has no covariate columns")
    z = read_covariates(args.noisy)
    if z.shape != x.shape:
        raise SchemaError(f"noisy covariates {z.shape} do not match training {x.shape}")
    try:
        query = np.array([float(v) for v in args.x.split(",")])
    except ValueError as exc:
        raise ConfigError(f"--x must be comma-separated numbers, got {args.x!r}") from exc
    if query.size != x.shape[1]:
        raise ConfigError(f"--x has {query.size} entries but data has {x.shape[1]} covariates")
    lam = float(args.lam)
    if lam < 0:
        raise ConfigError("--lambda must be nonnegative")

    out = Path(args.out)
    write_manifest(
        out,
        "diagnose",
        __version__,
        {
            "train": args.train,
            "noisy": args.noisy,
            "kind": args.kind,
            "lambda": lam,
            "x": args.x,
            "out": str(out),
        },
    )
    train = Dataset(x, responses, space)
    stats = covariate_stats(x)
    report = denoising_report_for(train, z, lam, query, GrowthConstants())
    rowspace_ok = True
    try:
        weight_lhs, weight_rhs = weight_stability_check(x, z, lam, query)
    except ValueError:
        rowspace_ok = False
        weight_lhs, weight_rhs = float("nan"), float("nan")
    write_diagnostics_csv(
        out / "diagnostics.csv",
        {
            "b_lambda": bias_term(stats.covariance, stats.mean, lam, query),
            "snr_reciprocal": snr_reciprocal(x, z, lam),
            "noise_norm": report.noise_norm,
            "signal_floor": report.signal_floor,
            "rowspace_ok": rowspace_ok,
            "precondition_ok": report.precondition_ok,
            "bound_rhs": report.bound_rhs,
            "observed_lhs": report.observed_lhs,
            "weight_lhs": weight_lhs,
            "weight_rhs": weight_rhs,
        },
    )
    print(f"wrote {out / 'diagnostics.csv'}")
    return EXIT_OK


def _cmd_verify_lemmas(args) -> int:
    results = run_suite(args.seed, args.instances, inject_fault=args.inject_fault)
    lines = [r.line() for r in results]
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "verify_report.txt").write_text(text)
    if any(not r.passed for r in results):
        failing = [r for r in results if not r.passed]
        sys.stderr.write(
            f"verification failed: {failing[0].name} (instance seed {failing[0].failing_seed})\n"
        )
        return EXIT_VERIFY
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="frechet-svt",
        description="Spectrally thresholded global Frechet regression toolkit",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a Monte Carlo campaign from a config file")
    sim.add_argument("--config", required=True, help="campaign config file")
    sim.add_argument("--seed", type=int, default=None, help="override the master seed")
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--grid-points", type=int, default=None, help="override threshold grid size")
    sim.set_defaults(func=_cmd_simulate)

    fp = sub.add_parser("fit-predict", help="fit on a training CSV and predict at query points")
    fp.add_argument("--train", required=True, help="training CSV (covariates + responses)")
    fp.add_argument("--queries", required=True, help="query covariates CSV")
    fp.add_argument("--kind", required=True, choices=["euclidean", "l1", "linf", "wasserstein", "correlation"])
    fp.add_argument("--lambda", dest="lam", default="0", help="threshold value or 'auto'")
    fp.add_argument("--holdout", default=None, help="holdout CSV for --lambda auto")
    fp.add_argument("--grid-points", type=int, default=40, help="grid size for --lambda auto")
    fp.add_argument("--out", required=True, help="output directory")
    fp.set_defaults(func=_cmd_fit_predict)

    diag = sub.add_parser("diagnose", help="evaluate error-bound quantities for a noisy design")
    diag.add_argument("--train", required=True, help="training CSV (covariates + responses)")
    diag.add_argument("--noisy", required=True, help="CSV with the noisy covariates")
    diag.add_argument("--kind", required=True, choices=["euclidean", "l1", "linf", "wasserstein", "correlation"])
    diag.add_argument("--lambda", dest="lam", type=float, required=True, help="threshold")
    diag.add_argument("--x", required=True, help="query point, comma-separated")
    diag.add_argument("--out", required=True, help="output directory")
    diag.set_defaults(func=_cmd_diagnose)

    ver = sub.add_parser("verify-lemmas", help="verify matrix identities on random instances")
    ver.add_argument("--seed", type=int, default=0)
    ver.add_argument("--instances", type=int, default=100)
    ver.add_argument("--inject-fault", action="store_true", help="negative control: corrupt one identity")
    ver.add_argument("--out", default=None, help="optional directory for the report file")
    ver.set_defaults(func=_cmd_verify_lemmas)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, SchemaError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_CONFIG
    except TrialFailure as exc:
        sys.stderr.write(f"solver error: {exc}\n")
        return EXIT_SOLVER
    except (ConvergenceError, DegenerateWeightsError) as exc:
        sys.stderr.write(f"solver error: {exc}\n")
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
