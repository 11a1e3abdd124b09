#!/usr/bin/env python3
"""Command-line entry point: lgcp simulate|kfit|fit|mcmle|predict|diagnose."""

from __future__ import annotations

import argparse
import json
import sys
from typing import Any, Sequence

from lgcp import __version__
from lgcp.errors import ConfigError, LGCPError
from lgcp_pipeline import COMMANDS, FileRunStore, InMemoryRunStore, RunConfig, RunOrchestrator, StageResult
from lgcp_pipeline.runtime import error_record

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERICAL = 3

# convenience flags -> config keys
FLAG_KEYS = {
    "input": "io.input",
    "output": "io.output",
    "chain": "io.chain",
    "seed": "mcmc.seed",
    "model": "model.kind",
    "regions": "model.regions",
    "region_counts": "model.region_counts",
    "offset": "model.offset",
    "covariates": "model.covariates",
    "chains": "mcmc.chains",
    "exceed": "predict.exceed",
    "percentile": "predict.percentiles",
    "functional": "predict.functional",
    "format": "predict.format",
    "u0": "kfit.u0",
    "kfit_c": "kfit.c",
    "theta0": "mcmle.theta0",
    "sims": "mcmle.sims",
}


def _overrides(args: argparse.Namespace) -> dict[str, str]:
    overrides: dict[str, str] = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    for flag, key in FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = str(value)
    return overrides


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lgcp",
        allow_abbrev=False,
        description="Log-Gaussian Cox process simulation and inference.",
    )
    parser.add_argument("--version", action="version", version=f"lgcp {__version__}")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", default=None, help="Config file of 'section.key = value' lines (else $LGCP_CONFIG).")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE", help="Override one config key; repeatable.")
    parser.add_argument("--input", help="Point pattern CSV (x,y[,mark][,t]).")
    parser.add_argument("--output", help="Output directory.")
    parser.add_argument("--chain", help="Chain CSV for predict/diagnose (default: <output>/chain.csv).")
    parser.add_argument("--seed", type=int, help="Run seed.")
    parser.add_argument("--model", help="Model kind: unitype, aggregated, multitype or spacetime.")
    parser.add_argument("--regions", help="Region map raster (aggregated models).")
    parser.add_argument("--region-counts", dest="region_counts", help="Region totals CSV (region_id,count).")
    parser.add_argument("--offset", help="Population offset raster d(x).")
    parser.add_argument("--covariates", help="Comma-separated covariate rasters.")
    parser.add_argument("--chains", type=int, help="Number of independent chains.")
    parser.add_argument("--exceed", help="Comma-separated exceedance thresholds.")
    parser.add_argument("--percentile", help="Comma-separated quantile levels.")
    parser.add_argument("--functional", help="exp_s, relative_risk or intensity.")
    parser.add_argument("--format", help="Raster format: asc or csv.")
    parser.add_argument("--u0", type=float, help="K-function fit: upper distance (0 = quarter of the shorter side).")
    parser.add_argument("--c", dest="kfit_c", type=float, help="K-function fit: power transform exponent.")
    parser.add_argument("--theta0", help="Monte Carlo MLE anchor: beta..., sigma, phi.")
    parser.add_argument("--sims", type=int, help="Monte Carlo MLE: conditional draws per anchor.")
    parser.add_argument("--dry-run", action="store_true", help="Keep the run record in memory; write no manifest.")
    parser.add_argument("--no-langgraph", action="store_true", help="Run stages with the sequential fallback.")
    return parser


def _print_stage(result: StageResult) -> None:
    line = {"stage": result.stage, "status": result.status, "elapsed_s": result.elapsed_s, "outputs": result.outputs}
    if result.warnings:
        line["warnings"] = result.warnings
    print(json.dumps(line, separators=(",", ":"), sort_keys=True), flush=True)


def _fail(exc: BaseException, code: int) -> int:
    print(json.dumps(error_record(exc), separators=(",", ":"), sort_keys=True, default=str), file=sys.stderr)
    return code


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.config:
            config = RunConfig.load(args.config, _overrides(args))
        else:
            config = RunConfig.from_env(_overrides(args))
        store: Any = InMemoryRunStore() if args.dry_run else FileRunStore(config.output_dir, version=__version__)
        orchestrator = RunOrchestrator(store=store, use_langgraph=not args.no_langgraph, on_result=_print_stage)
        summary = orchestrator.run(args.command, config)
    except LGCPError as exc:
        return _fail(exc, exc.exit_code)
    except OSError as exc:
        return _fail(exc, EXIT_INVALID)
    print(json.dumps(summary, indent=2, sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
