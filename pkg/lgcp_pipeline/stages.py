"""Pipeline stages; each command of the runner is a fixed list of these."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Protocol

import numpy as np

from lgcp import io
from lgcp.errors import ConfigError, DataFormatError, InsufficientSamplesError, OptimizationError
from lgcp.grid import (
    GridSpec,
    PointPattern,
    RegionPartition,
    bin_marked_points,
    bin_points,
    bin_spacetime_points,
)
from lgcp.mc_likelihood import MCTheta, mc_mle_reanchored
from lgcp.mcmc import (
    ChainInit,
    PosteriorSamples,
    choose_thin,
    diagnostics,
    run_chains,
    stream_rng,
    trace_diagnostics,
)
from lgcp.models import (
    AggregatedTarget,
    MultitypeModel,
    MultitypeTarget,
    SpaceTimeTarget,
    STModel,
    UnitypeModel,
    UnitypeTarget,
    aggregate_counts,
    simulate,
)
from lgcp.prediction import (
    aggregated_risk_report,
    exceedance_probability,
    percentile_surface,
    segregation_sets,
    type_probability_surfaces,
)
from lgcp.summary_stats import estimate_K, fit_moments, fit_temporal_baseline, kernel_intensity, model_K_on_grid

from .config import RunConfig
from .models import StageResult

CHAIN_FILE = "chain.csv"
FIELDS_FILE = "fields.txt"


@dataclass
class StageContext:
    config: RunConfig
    output_dir: Path
    state: dict[str, Any] = field(default_factory=dict)

    def path(self, name: str) -> Path:
        return self.output_dir / name


class Stage(Protocol):
    name: str

    def run(self, ctx: StageContext) -> StageResult: ...


# --------------------------------------------------------------------------
# shared model construction
# --------------------------------------------------------------------------


def _offset(config: RunConfig, grid: GridSpec) -> np.ndarray | None:
    if not config["model.offset"]:
        return None
    # NODATA cells lie outside the population surface
    return np.nan_to_num(io.read_ascii_grid(config["model.offset"], grid), nan=0.0)


def _covariates(config: RunConfig, grid: GridSpec) -> tuple[np.ndarray, tuple[str, ...]]:
    paths = config["model.covariates"]
    names = tuple(Path(p).stem for p in paths)
    if len(set(names)) != len(names):
        raise ConfigError("covariate rasters need distinct file names", key="model.covariates")
    return io.read_covariates(paths, grid), names


def _region_map(config: RunConfig, grid: GridSpec) -> np.ndarray:
    if not config["model.regions"]:
        raise ConfigError("aggregated models need model.regions (region map raster)", key="model.regions")
    values = np.nan_to_num(io.read_ascii_grid(config["model.regions"], grid), nan=0.0)
    regions = np.rint(values).astype(int)
    if not np.allclose(values, regions):
        raise DataFormatError("region map must hold integer region ids", config["model.regions"])
    return regions


def _unitype_model(config: RunConfig, grid: GridSpec, beta: np.ndarray | None = None) -> UnitypeModel:
    covariates, names = _covariates(config, grid)
    if beta is None:
        beta = np.zeros(covariates.shape[0] + 1)
    return UnitypeModel(
        grid=grid,
        cov=config.covariance(),
        beta=beta,
        covariates=covariates,
        offset=_offset(config, grid),
        covariate_names=names,
    )


def _spatial_baseline(config: RunConfig, grid: GridSpec, pattern: PointPattern) -> np.ndarray:
    """Per-step baseline intensity lambda0(x): kernel smoothed when a bandwidth is set, flat otherwise."""
    steps = config["model.time_steps"]
    bandwidth = config["model.baseline_bandwidth"]
    if bandwidth > 0:
        return kernel_intensity(pattern, grid, bandwidth) / steps
    return np.full(grid.shape, max(len(pattern), 0.5) / (grid.window.area * steps))


def _temporal_baseline(config: RunConfig, step_counts: np.ndarray | None = None) -> np.ndarray | None:
    """mu0(t): the configured values, else a Poisson regression on the per-step totals, else flat."""
    values = config["model.temporal_baseline"]
    if values:
        return np.asarray(values, dtype=float)
    if step_counts is None or not np.any(step_counts):
        return None
    fit = fit_temporal_baseline(
        step_counts,
        period=config["model.temporal_period"],
        weekly=config["model.temporal_weekly"],
        trend=config["model.temporal_trend"],
        harmonics=config["model.temporal_harmonics"],
    )
    return fit.baseline


def _read_pattern(config: RunConfig, grid: GridSpec) -> PointPattern:
    if not config["io.input"]:
        raise ConfigError("io.input (point pattern CSV) is required", key="io.input")
    n_types = config["model.types"] if config.kind == "multitype" else None
    pattern = io.read_pattern(config["io.input"], grid.window, n_types=n_types)
    if config.kind == "multitype" and pattern.marks is None:
        raise DataFormatError("multitype models need a mark column", config["io.input"], 1)
    if config.kind == "spacetime" and pattern.times is None:
        raise DataFormatError("spatio-temporal models need a t column", config["io.input"], 1)
    return pattern


def _rasters(ctx: StageContext, grid: GridSpec, named: dict[str, np.ndarray]) -> list[str]:
    fmt = ctx.config["predict.format"]
    written = []
    for name, values in named.items():
        filename = f"{name}.{fmt}"
        io.write_raster(ctx.path(filename), io.as_raster(grid, values, name), fmt)
        written.append(filename)
    return written


# --------------------------------------------------------------------------
# stages
# --------------------------------------------------------------------------


class SimulateStage:
    name = "simulate"

    def run(self, ctx: StageContext) -> StageResult:
        config = ctx.config
        grid = config.grid()
        rng = stream_rng(config.seed, "simulate")
        kind = config.kind
        rasters: dict[str, np.ndarray] = {}
        outputs: list[str] = []

        if kind in ("unitype", "aggregated"):
            beta = np.concatenate([[config["model.beta0"]], config["model.beta"]])
            model = _unitype_model(config, grid, beta)
            sim = simulate(model, rng)
            rasters["true_field"] = grid.restrict(sim.field)
            rasters["true_intensity"] = sim.cell_means / grid.cell_area
            if kind == "aggregated":
                partition = RegionPartition(_region_map(config, grid), {}, model.offset)
                io.write_region_counts(ctx.path("region_counts.csv"), aggregate_counts(sim.counts, partition))
                outputs.append("region_counts.csv")
        elif kind == "multitype":
            m = config["model.types"]
            beta = np.asarray(config["model.beta"] or [config["model.beta0"]] * m, dtype=float)
            if beta.shape[0] != m:
                raise ConfigError(f"model.beta needs one value per type ({m})", key="model.beta")
            sim = simulate(MultitypeModel(grid=grid, cov=config.covariance(), beta=beta, offset=_offset(config, grid)), rng)
            for k in range(m):
                rasters[f"true_field_type{k + 1}"] = grid.restrict(sim.field[k])
                rasters[f"true_intensity_type{k + 1}"] = sim.cell_means[k] / grid.cell_area
        else:
            offset = _offset(config, grid)
            baseline = math.exp(config["model.beta0"]) * (np.ones(grid.shape) if offset is None else offset)
            model = STModel(
                grid=grid,
                cov=config.st_covariance(),
                time_steps=config["model.time_steps"],
                baseline=baseline,
                temporal_baseline=_temporal_baseline(config),
            )
            sim = simulate(model, rng)
            for t in range(model.time_steps):
                rasters[f"true_field_t{t}"] = grid.restrict(sim.field[t])
                rasters[f"true_intensity_t{t}"] = sim.cell_means[t] / grid.cell_area

        io.write_pattern(ctx.path("pattern.csv"), sim.pattern)
        outputs.insert(0, "pattern.csv")
        outputs.extend(_rasters(ctx, grid, rasters))
        ctx.state["simulation"] = sim
        payload = {
            "kind": kind,
            "n_points": len(sim.pattern),
            "expected_points": float(np.sum(sim.cell_means)),
        }
        return StageResult(stage=self.name, payload=payload, outputs=outputs)


class LoadDataStage:
    """Read the observations named in the config and build the sampler target."""

    name = "load"

    def run(self, ctx: StageContext) -> StageResult:
        config = ctx.config
        grid = config.grid()
        kind = config.kind
        payload: dict[str, Any] = {"kind": kind, "grid": [grid.nx, grid.ny]}

        if kind == "aggregated":
            if not config["model.region_counts"]:
                raise ConfigError("aggregated models need model.region_counts", key="model.region_counts")
            model = _unitype_model(config, grid)
            totals = io.read_region_counts(config["model.region_counts"])
            partition = RegionPartition(_region_map(config, grid), totals, model.offset)
            factory: Callable[[], Any] = lambda: AggregatedTarget(model, partition)
            payload.update(n_regions=len(totals), total_count=sum(totals.values()))
        else:
            pattern = _read_pattern(config, grid)
            ctx.state["pattern"] = pattern
            payload["n_points"] = len(pattern)
            if kind == "unitype":
                model = _unitype_model(config, grid)
                counts = bin_points(pattern, grid)
                ctx.state["counts"] = grid.restrict(counts.counts)
                factory = lambda: UnitypeTarget(model, counts)
            elif kind == "multitype":
                m = config["model.types"]
                model = MultitypeModel(grid=grid, cov=config.covariance(), beta=np.zeros(m), offset=_offset(config, grid))
                typed = bin_marked_points(pattern, grid)
                per_type = config["cov.per_type"]
                factory = lambda: MultitypeTarget(model, typed, per_type=per_type)
                payload["type_counts"] = typed.sum(axis=(1, 2)).astype(int).tolist()
            else:
                steps = config["model.time_steps"]
                st_counts = bin_spacetime_points(pattern, grid, steps)
                step_totals = st_counts.sum(axis=(1, 2))
                model = STModel(
                    grid=grid,
                    cov=config.st_covariance(),
                    time_steps=steps,
                    baseline=_spatial_baseline(config, grid, pattern),
                    temporal_baseline=_temporal_baseline(config, step_totals),
                )
                factory = lambda: SpaceTimeTarget(model, st_counts)
                payload["step_counts"] = step_totals.astype(int).tolist()
                payload["temporal_baseline"] = model.temporal_baseline.tolist()

        ctx.state["model"] = model
        ctx.state["target_factory"] = factory
        return StageResult(stage=self.name, payload=payload)


class KFitStage:
    """Moment fit of (sigma, phi) to the edge-corrected K-function.

    With ``required=False`` the stage only seeds later stages: it is skipped
    when they do not need it and a failed fit becomes a warning.
    """

    name = "kfit"

    def __init__(self, required: bool = True, seeds: str = "") -> None:
        self.required = required
        self.seeds = seeds

    def _skip_reason(self, ctx: StageContext) -> str:
        config = ctx.config
        if "pattern" not in ctx.state:
            return "no point pattern (aggregated counts)"
        if self.seeds == "fit" and config["mcmc.fix_theta"]:
            return "mcmc.fix_theta holds the covariance parameters at their configured values"
        if self.seeds == "mcmle" and config["mcmle.theta0"]:
            return "mcmle.theta0 given"
        return ""

    def run(self, ctx: StageContext) -> StageResult:
        config = ctx.config
        reason = self._skip_reason(ctx)
        if reason:
            if self.required:
                raise ConfigError(f"kfit needs a point pattern: {reason}", key="io.input")
            return StageResult(stage=self.name, payload={"reason": reason}, status="skipped")

        pattern: PointPattern = ctx.state["pattern"]
        window = pattern.window
        u0 = config["kfit.u0"] or None
        u_max = max(window.shorter_side / 4.0, u0 or 0.0)
        k_estimate = estimate_K(pattern, u_max=u_max, n_bins=config["kfit.n_bins"])
        try:
            fit = fit_moments(
                k_estimate,
                family=config["cov.family"],
                u0=u0,
                c=config["kfit.c"],
                kappa=config["cov.kappa"],
                weight=config["kfit.weight"],
            )
        except OptimizationError as exc:
            if self.required:
                raise
            message = f"moment fit failed, using configured covariance: {exc}"
            return StageResult(stage=self.name, payload={"reason": str(exc)}, status="skipped", warnings=[message])

        ctx.state["moment_fit"] = fit
        k_model = model_K_on_grid(fit.covariance(config["cov.family"], config["cov.kappa"]), k_estimate.u)
        io.write_table(
            ctx.path("kfit.csv"),
            ["u", "k_hat", "k_model"],
            zip(k_estimate.u.tolist(), k_estimate.k_hat.tolist(), k_model.tolist()),
        )
        payload = {
            "sigma": fit.sigma,
            "phi": fit.phi,
            "discrepancy": fit.discrepancy,
            "n_points": k_estimate.n,
            "u_max": k_estimate.u_max,
            "starts": fit.starts,
        }
        io.write_json(ctx.path("kfit.json"), payload)
        return StageResult(stage=self.name, payload=payload, outputs=["kfit.csv", "kfit.json"])


def _initial_log_theta(ctx: StageContext) -> np.ndarray | None:
    config = ctx.config
    fit = ctx.state.get("moment_fit")
    if fit is not None:
        return np.log([fit.sigma, fit.phi])
    if config["cov.sigma2"] > 0:
        return np.log([math.sqrt(config["cov.sigma2"]), config["cov.phi"]])
    if config["mcmc.fix_theta"]:
        raise ConfigError("mcmc.fix_theta needs cov.sigma2 > 0", key="cov.sigma2")
    return None


class FitStage:
    name = "fit"

    def run(self, ctx: StageContext) -> StageResult:
        config = ctx.config
        sampler = config.sampler()
        init = ChainInit(log_theta=_initial_log_theta(ctx))
        chains = run_chains(ctx.state["target_factory"], sampler, init, config.seed, config["mcmc.chains"])
        samples = PosteriorSamples.merge(chains)
        ctx.state["samples"] = samples

        outputs = [CHAIN_FILE, FIELDS_FILE]
        io.write_chain(ctx.path(CHAIN_FILE), samples)
        io.write_fields(ctx.path(FIELDS_FILE), samples.fields)
        if len(chains) > 1:
            for k, chain in enumerate(chains, start=1):
                io.write_chain(ctx.path(f"chain_{k}.csv"), chain)
                outputs.append(f"chain_{k}.csv")

        warnings = list(samples.warnings)
        try:
            report = diagnostics(samples)
        except InsufficientSamplesError as exc:
            report = {"warnings": [str(exc)]}
        warnings.extend(w for w in report["warnings"] if w not in warnings)
        report["chains"] = [
            {"acceptance": c.acceptance_rate, "trailing_acceptance": c.trailing_acceptance(), "final_h": float(c.h_trace[-1])}
            for c in chains
        ]
        io.write_json(ctx.path("diagnostics.json"), report)
        outputs.append("diagnostics.json")

        payload = {
            "kind": samples.kind,
            "n_draws": samples.n_draws,
            "acceptance": samples.acceptance_rate,
            "trailing_acceptance": samples.trailing_acceptance(),
            "beta_mean": dict(zip(samples.beta_names, samples.beta.mean(axis=0).tolist())),
            "sigma_mean": samples.sigma.mean(axis=0).tolist(),
            "phi_mean": samples.phi.mean(axis=0).tolist(),
            "audit_checks": samples.audit_checks,
        }
        return StageResult(stage=self.name, payload=payload, outputs=outputs, warnings=warnings)


class MCMLEStage:
    name = "mcmle"

    def _theta0(self, ctx: StageContext, model: UnitypeModel) -> MCTheta:
        config = ctx.config
        given = config["mcmle.theta0"]
        n_beta = model.beta.shape[0]
        if given:
            if len(given) != n_beta + 2:
                raise ConfigError(
                    f"mcmle.theta0 needs {n_beta} beta values then sigma and phi", key="mcmle.theta0"
                )
            return MCTheta(beta=np.asarray(given[:n_beta]), sigma=given[-2], phi=given[-1])
        log_theta = _initial_log_theta(ctx)
        if log_theta is None:
            raise ConfigError("mcmle needs mcmle.theta0, a moment fit, or cov.sigma2 > 0", key="mcmle.theta0")
        beta = UnitypeTarget(model, ctx.state["counts"]).initial_beta()
        return MCTheta(beta=beta, sigma=math.exp(log_theta[0]), phi=math.exp(log_theta[1]))

    def run(self, ctx: StageContext) -> StageResult:
        config = ctx.config
        if config.kind != "unitype":
            raise ConfigError("mcmle supports model.kind = unitype only", key="model.kind")
        model: UnitypeModel = ctx.state["model"]
        theta0 = self._theta0(ctx, model)
        results = mc_mle_reanchored(
            model,
            ctx.state["counts"],
            theta0,
            config["mcmle.sims"],
            stream_rng(config.seed, "mcmle"),
            rounds=config["mcmle.reanchor"],
            fixed=config["mcmle.fixed"],
            priors=config.priors(),
            max_thin=config["mcmle.max_thin"],
        )
        final = results[-1]
        payload = {
            "theta0": theta0.to_dict(),
            "beta_names": list(model.beta_names),
            "rounds": [r.to_dict() for r in results],
            "estimate": final.theta.to_dict(),
        }
        io.write_json(ctx.path("mcmle.json"), payload)
        return StageResult(stage=self.name, payload=payload, outputs=["mcmle.json"], warnings=list(final.warnings))


def _chain_path(config: RunConfig, output_dir: Path) -> Path:
    return Path(config["io.chain"]) if config["io.chain"] else output_dir / CHAIN_FILE


def _column_block(columns: dict[str, np.ndarray], stem: str) -> tuple[np.ndarray, list[str]]:
    names = [name for name in columns if name == stem or name.startswith(stem + "_")]
    n = len(next(iter(columns.values())))
    if not names:
        return np.zeros((n, 0)), []
    return np.column_stack([columns[name] for name in names]), names


class LoadChainStage:
    """Rebuild posterior samples from a chain CSV and the field draws beside it."""

    name = "load_chain"

    def run(self, ctx: StageContext) -> StageResult:
        config = ctx.config
        grid = config.grid()
        chain_path = _chain_path(config, ctx.output_dir)
        columns = io.read_chain(chain_path)
        fields = io.read_fields(chain_path.with_name(FIELDS_FILE))
        if fields.shape[0] != columns["iter"].shape[0]:
            raise DataFormatError(
                f"{FIELDS_FILE} holds {fields.shape[0]} draws but the chain has {columns['iter'].shape[0]}",
                str(chain_path),
            )
        beta, beta_cols = _column_block(columns, "beta")
        sigma, _ = _column_block(columns, "sigma")
        phi, _ = _column_block(columns, "phi")
        if beta_cols == ["beta"]:
            beta_names: tuple[str, ...] = ("intercept",)
        else:
            beta_names = tuple(name[len("beta_"):] for name in beta_cols)

        design = log_exposure = None
        if config.kind in ("unitype", "aggregated"):
            model = _unitype_model(config, grid)
            design, log_exposure = model.design, model.log_exposure
        elif config.kind == "multitype":
            log_exposure = MultitypeModel(
                grid=grid, cov=config.covariance(), beta=np.zeros(config["model.types"]), offset=_offset(config, grid)
            ).log_exposure
        elif config["io.input"]:
            pattern = _read_pattern(config, grid)
            steps = config["model.time_steps"]
            step_totals = bin_spacetime_points(pattern, grid, steps).sum(axis=(1, 2))
            log_exposure = STModel(
                grid=grid,
                cov=config.st_covariance(),
                time_steps=steps,
                baseline=_spatial_baseline(config, grid, pattern),
                temporal_baseline=_temporal_baseline(config, step_totals),
            ).log_exposure

        ctx.state["samples"] = PosteriorSamples(
            fields=fields,
            beta=beta,
            sigma=sigma,
            phi=phi,
            logpost=columns["logpost"],
            iterations=columns["iter"].astype(np.int64),
            kind=config.kind,
            beta_names=beta_names,
            grid=grid,
            design=design,
            log_exposure=log_exposure,
        )
        payload = {"chain": str(chain_path), "n_draws": int(fields.shape[0]), "kind": config.kind}
        return StageResult(stage=self.name, payload=payload)


class PredictStage:
    name = "predict"

    def _layers(self, ctx: StageContext, samples: PosteriorSamples) -> list[tuple[int | None, str]]:
        if samples.kind == "multitype":
            return [(k, f"_type{k + 1}") for k in range(samples.fields.shape[1])]
        if samples.kind == "spacetime":
            step = ctx.config["predict.time_step"]
            t = step if step >= 0 else samples.fields.shape[1] + step
            return [(step, f"_t{t}")]
        return [(None, "")]

    def run(self, ctx: StageContext) -> StageResult:
        config = ctx.config
        samples: PosteriorSamples = ctx.state["samples"]
        grid = samples.grid
        functional = config["predict.functional"]
        direction = config["predict.direction"]
        rasters: dict[str, np.ndarray] = {}
        tables: list[str] = []
        payload: dict[str, Any] = {"functional": functional}

        for layer, suffix in self._layers(ctx, samples):
            for p in config["predict.percentiles"]:
                raster = percentile_surface(samples, functional, p, layer)
                rasters[raster.name + suffix] = raster.values
            for threshold in config["predict.exceed"]:
                raster = exceedance_probability(samples, functional, threshold, direction, layer)
                rasters[raster.name + suffix] = raster.values

        if samples.kind == "multitype":
            for raster in type_probability_surfaces(samples):
                rasters[raster.name] = raster.values
            sets = segregation_sets(samples, config["predict.segregation_c"], config["predict.segregation_q"])
            rows = [(s.type_index, s.c, s.q, s.size) for s in sets]
            io.write_table(ctx.path("segregation.csv"), ["type", "c", "q", "n_cells"], rows)
            tables.append("segregation.csv")
            for s in sets:
                rasters[f"dominance_type{s.type_index}_c{s.c:g}"] = s.probability
            payload["segregation"] = [dict(zip(("type", "c", "q", "n_cells"), row)) for row in rows]

        if samples.kind == "aggregated":
            threshold = config["predict.exceed"][0] if config["predict.exceed"] else 1.1
            report = aggregated_risk_report(samples, threshold=threshold)
            for raster in (report.relative_risk, report.log_variance, report.exceedance):
                rasters[raster.name] = raster.values
            io.write_table(
                ctx.path("effects.csv"),
                ["parameter", "q0.500", "q0.025", "q0.975"],
                [(e["parameter"], e["q0.500"], e["q0.025"], e["q0.975"]) for e in report.effects],
            )
            tables.append("effects.csv")
            payload["effects"] = report.effects

        outputs = tables + _rasters(ctx, grid, rasters)
        payload["rasters"] = sorted(rasters)
        return StageResult(stage=self.name, payload=payload, outputs=outputs)


class DiagnoseStage:
    name = "diagnose"

    def run(self, ctx: StageContext) -> StageResult:
        chain_path = _chain_path(ctx.config, ctx.output_dir)
        columns = io.read_chain(chain_path)
        traces = {name: values for name, values in columns.items() if name != "iter"}
        report = trace_diagnostics(traces)
        report["chain"] = str(chain_path)
        report["suggested_thin"] = {name: choose_thin(values) for name, values in traces.items()}
        io.write_json(ctx.path("diagnostics.json"), report)
        payload = {
            "n_draws": report["n_draws"],
            "lag1": {name: entry["lag1"] for name, entry in report["parameters"].items()},
        }
        return StageResult(
            stage=self.name, payload=payload, outputs=["diagnostics.json"], warnings=list(report["warnings"])
        )


COMMANDS = ("simulate", "kfit", "fit", "mcmle", "predict", "diagnose")


def stages_for(command: str) -> list[Stage]:
    if command == "simulate":
        return [SimulateStage()]
    if command == "kfit":
        return [LoadDataStage(), KFitStage()]
    if command == "fit":
        return [LoadDataStage(), KFitStage(required=False, seeds="fit"), FitStage()]
    if command == "mcmle":
        return [LoadDataStage(), KFitStage(required=False, seeds="mcmle"), MCMLEStage()]
    if command == "predict":
        return [LoadChainStage(), PredictStage()]
    if command == "diagnose":
        return [DiagnoseStage()]
    raise ConfigError(f"unknown command {command!r}; expected one of {COMMANDS}")
