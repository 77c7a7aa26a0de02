"""Command-line entry point: `sdcpse <experiment> [options]`."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import polars as pl

from sdcpse._constants import EXPERIMENT_DEFAULTS
from sdcpse._errors import NumericalError
from sdcpse._registry import get_runner
from sdcpse.bench import (
    BumpSeries,
    ConvergenceRecord,
    ExperimentConfig,
    config_row,
    fit_convergence_order,
    flat_reference_series,
    save_results,
    save_time_series,
)

logger = logging.getLogger("sdcpse")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sdcpse",
        description="Run Surface DC-PSE benchmark experiments and write their results as CSV.",
    )
    parser.add_argument("experiment", choices=list(EXPERIMENT_DEFAULTS), help="Experiment to run.")
    parser.add_argument(
        "--np",
        dest="resolutions",
        type=int,
        action="append",
        metavar="N",
        help="Point count to run. Repeatable. Default: the experiment's resolution ladder.",
    )
    parser.add_argument("--order", type=int, help="Order of accuracy r of the operators.")
    parser.add_argument("--rc-factor", type=float, help="Cutoff radius in units of dn.")
    parser.add_argument("--dn", type=float, help="Fixed normal spacing (overrides the dn rule).")
    parser.add_argument("--nn", dest="n_layers", type=int, help="Extension layers per side.")
    parser.add_argument("--eps-factor", type=float, help="Kernel width over average spacing.")
    parser.add_argument(
        "--alpha",
        type=float,
        action="append",
        help="Bump height (bump-diffusion). Repeatable; every value is run.",
    )
    parser.add_argument("--spacing", type=float, help="Flat grid spacing h (bump-diffusion).")
    parser.add_argument("--dt", type=float, help="Time step (bump-diffusion).")
    parser.add_argument("--tfinal", dest="t_final", type=float, help="Final time (bump-diffusion).")
    parser.add_argument(
        "--reference",
        action="store_true",
        help="Also compute the flat finite-difference reference and report the peak error.",
    )
    parser.add_argument("--input", dest="input_path", type=Path, help="Point-cloud file to read.")
    parser.add_argument(
        "--out",
        dest="output_path",
        type=Path,
        help="Result CSV (default: <experiment>.csv in the current directory).",
    )
    parser.add_argument(
        "--estimate-normals",
        action="store_true",
        default=None,
        help="Estimate normals when the input file has none.",
    )
    parser.add_argument(
        "--k", dest="normal_neighbors", type=int, help="Neighbors for normal estimation."
    )
    parser.add_argument("--gmres-rtol", type=float, help="Relative tolerance of implicit solves.")
    parser.add_argument(
        "--gmres-maxiter", type=int, help="Iteration budget of implicit solves."
    )
    parser.add_argument("--jobs", dest="n_jobs", type=int, help="Threads for operator builds.")
    parser.add_argument("--cache-dir", type=Path, help="Directory for saved surface operators.")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Log debug details.")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Log warnings only.")
    return parser


def parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    return build_parser().parse_args(argv)


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    """Experiment defaults updated with the options given on the command line."""
    overrides = {
        name: getattr(args, name)
        for name in (
            "resolutions",
            "order",
            "rc_factor",
            "dn",
            "n_layers",
            "eps_factor",
            "spacing",
            "dt",
            "t_final",
            "input_path",
            "output_path",
            "estimate_normals",
            "normal_neighbors",
            "gmres_rtol",
            "gmres_maxiter",
            "n_jobs",
            "cache_dir",
        )
    }
    if overrides["output_path"] is None:
        overrides["output_path"] = Path(f"{args.experiment}.csv")
    return ExperimentConfig.for_experiment(args.experiment, **overrides)


def _report_orders(name: str, records: list[ConvergenceRecord]) -> None:
    if len(records) < 3:
        return
    orders = fit_convergence_order(records)
    print(f"{name}: fitted order L2={orders['L2']:.2f} Linf={orders['Linf']:.2f}")


def run(cfg: ExperimentConfig, *, alphas: list[float] | None = None, reference: bool = False):
    """Run one experiment and write its CSV to `cfg.output_path`."""
    runner = get_runner(cfg.experiment)
    logger.debug("configuration: %s", config_row(cfg))

    if cfg.experiment == "bump-diffusion":
        series: list[BumpSeries] = []
        for alpha in alphas or [cfg.alpha]:
            alpha_cfg = dataclasses.replace(cfg, alpha=alpha)
            series.append(runner(alpha_cfg))
            print(f"alpha={alpha:g}: peak f(x0)={series[-1].peak_value:.6g}")
        save_time_series(series, cfg.output_path)
        if reference:
            flat = flat_reference_series(t_final=cfg.t_final)
            for s in series:
                if s.alpha == 0.0:
                    error = s.peak_error(flat)
                    print(f"alpha=0: peak error against the flat reference {error:.3e}")
        return series

    result = runner(cfg)
    if isinstance(result, pl.DataFrame):
        # Curvature output is written by the driver
        print(f"{cfg.experiment}: {result.height} points written to {cfg.output_path}")
        return result
    if isinstance(result, dict):
        save_results([rec for records in result.values() for rec in records], cfg.output_path)
        for key, records in result.items():
            _report_orders(f"{cfg.experiment}-{key}", records)
        return result
    save_results(result, cfg.output_path)
    _report_orders(cfg.experiment, result)
    return result


def main(argv: list[str] | None = None) -> int:
    """
    Run the command line.

    Returns
    -------
    int
        0 on success, 2 for invalid configuration or input, 3 for numerical failures.
    """
    args = parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    try:
        cfg = config_from_args(args)
        run(cfg, alphas=args.alpha, reference=args.reference)
    except NumericalError as err:
        print(f"[error] numerical failure: {err}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as err:
        print(f"[error] {err}", file=sys.stderr)
        return 2
    print(f"results written to {cfg.output_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
