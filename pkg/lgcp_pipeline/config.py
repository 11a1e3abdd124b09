from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Any, Callable, Mapping

from lgcp.covariance import CovarianceModel, SeparableSTCovariance
from lgcp.errors import ConfigError, InvalidInputError
from lgcp.grid import GridSpec, build_grid
from lgcp.mcmc import Priors, SamplerConfig

ENV_CONFIG = "LGCP_CONFIG"
ENV_OUTPUT_DIR = "LGCP_OUTPUT_DIR"
ENV_SEED = "LGCP_SEED"

MODEL_KINDS = ("unitype", "aggregated", "multitype", "spacetime")
TRUE_VALUES = {"1", "true", "yes", "on"}
FALSE_VALUES = {"0", "false", "no", "off"}


def _bool(raw: str) -> bool:
    text = raw.strip().lower()
    if text in TRUE_VALUES:
        return True
    if text in FALSE_VALUES:
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def _floats(raw: str) -> tuple[float, ...]:
    return tuple(float(part) for part in raw.split(",") if part.strip())


def _strings(raw: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in raw.split(",") if part.strip())


def _text(raw: str) -> str:
    return raw.strip()


# key -> (parser, default); defaults are stored already parsed
SCHEMA: dict[str, tuple[Callable[[str], Any], Any]] = {
    "grid.xmin": (float, 0.0),
    "grid.ymin": (float, 0.0),
    "grid.xmax": (float, 1.0),
    "grid.ymax": (float, 1.0),
    "grid.nx": (int, 32),
    "grid.ny": (int, 32),
    "grid.extension_factor": (float, 2.0),
    "cov.family": (_text, "exponential"),
    "cov.sigma2": (float, 1.0),
    "cov.phi": (float, 0.1),
    "cov.kappa": (float, 0.5),
    "cov.temporal_rho": (float, 0.0),
    "cov.per_type": (_bool, False),
    "model.kind": (_text, "unitype"),
    "model.beta0": (float, 0.0),
    "model.beta": (_floats, ()),
    "model.covariates": (_strings, ()),
    "model.offset": (_text, ""),
    "model.types": (int, 2),
    "model.time_steps": (int, 1),
    "model.regions": (_text, ""),
    "model.region_counts": (_text, ""),
    "model.baseline_bandwidth": (float, 0.0),
    "model.temporal_baseline": (_floats, ()),
    # fitted when model.temporal_baseline is empty; period in time steps, 0 = no seasonal term
    "model.temporal_period": (float, 0.0),
    "model.temporal_harmonics": (int, 1),
    "model.temporal_weekly": (_bool, False),
    "model.temporal_trend": (_bool, True),
    "mcmc.burnin": (int, 1000),
    "mcmc.iters": (int, 9000),
    "mcmc.thin": (int, 9),
    "mcmc.seed": (int, 1),
    "mcmc.target_accept": (float, 0.574),
    "mcmc.c": (float, 0.4),
    "mcmc.adapt_rate": (float, 0.01),
    "mcmc.h0": (float, 1.0),
    "mcmc.chains": (int, 1),
    "mcmc.fix_theta": (_bool, False),
    "mcmc.adapt_during_sampling": (_bool, True),
    "mcmc.prior_log_sigma_mean": (float, 0.0),
    "mcmc.prior_log_sigma_var": (float, 0.15),
    "mcmc.prior_log_phi_mean": (float, math.log(10.0)),
    "mcmc.prior_log_phi_var": (float, 0.15),
    "mcmc.prior_beta_mean": (float, 0.0),
    "mcmc.prior_beta_var": (float, 1e6),
    "kfit.u0": (float, 0.0),
    "kfit.c": (float, 0.25),
    "kfit.n_bins": (int, 100),
    "kfit.weight": (_text, "uniform"),
    "mcmle.sims": (int, 1000),
    "mcmle.theta0": (_floats, ()),
    "mcmle.reanchor": (int, 0),
    "mcmle.max_thin": (int, 64),
    "mcmle.fixed": (_strings, ()),
    "predict.percentiles": (_floats, (0.5,)),
    "predict.exceed": (_floats, ()),
    "predict.functional": (_text, "exp_s"),
    "predict.direction": (_text, ">"),
    "predict.segregation_c": (float, 0.8),
    "predict.segregation_q": (_floats, (0.6, 0.7, 0.8, 0.9)),
    "predict.time_step": (int, -1),
    "predict.format": (_text, "asc"),
    "io.input": (_text, ""),
    "io.output": (_text, "lgcp_out"),
    "io.chain": (_text, ""),
}

# keys that name input files; their checksums go into the run manifest
INPUT_KEYS = ("io.input", "io.chain", "model.offset", "model.regions", "model.region_counts", "model.covariates")


def _parse_value(key: str, raw: str, line: int | None) -> Any:
    if key not in SCHEMA:
        where = f" (line {line})" if line is not None else ""
        raise ConfigError(f"unknown config key {key!r}{where}", key=key, line=line)
    parser, _ = SCHEMA[key]
    try:
        return parser(raw)
    except ValueError as exc:
        where = f" (line {line})" if line is not None else ""
        raise ConfigError(f"bad value for {key}{where}: {exc}", key=key, line=line) from None


def parse_config_text(text: str) -> dict[str, Any]:
    """Flat ``section.key = value`` lines; ``#`` starts a comment."""
    values: dict[str, Any] = {}
    for number, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {number}: expected 'section.key = value'", line=number)
        key, raw = (part.strip() for part in line.split("=", 1))
        if key in values:
            raise ConfigError(f"line {number}: duplicate key {key!r}", key=key, line=number)
        values[key] = _parse_value(key, raw, number)
    return values


@dataclass(frozen=True)
class RunConfig:
    values: Mapping[str, Any] = field(default_factory=dict)
    source: str = ""

    def __post_init__(self) -> None:
        merged = {key: default for key, (_, default) in SCHEMA.items()}
        for key, value in self.values.items():
            if key not in SCHEMA:
                raise ConfigError(f"unknown config key {key!r}", key=key)
            merged[key] = value
        object.__setattr__(self, "values", MappingProxyType(merged))
        self._validate()

    def _validate(self) -> None:
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"model.kind must be one of {MODEL_KINDS}, got {self.kind!r}", key="model.kind")
        positive = ("grid.nx", "grid.ny", "mcmc.chains", "model.types", "model.time_steps", "model.temporal_harmonics")
        for key in (*positive, "mcmle.sims"):
            if self[key] < 1:
                raise ConfigError(f"{key} must be >= 1, got {self[key]}", key=key)
        if self.kind == "multitype" and self["model.types"] < 2:
            raise ConfigError("a multitype model needs model.types >= 2", key="model.types")
        if not -1.0 < self["cov.temporal_rho"] < 1.0:
            raise ConfigError("cov.temporal_rho must lie in (-1, 1)", key="cov.temporal_rho")
        if not 0.0 < self["predict.segregation_c"] < 1.0:
            raise ConfigError("predict.segregation_c must lie in (0, 1)", key="predict.segregation_c")
        if self["predict.format"] not in ("asc", "csv"):
            raise ConfigError("predict.format must be 'asc' or 'csv'", key="predict.format")

    def __getitem__(self, key: str) -> Any:
        if key not in self.values:
            raise ConfigError(f"unknown config key {key!r}", key=key)
        return self.values[key]

    @classmethod
    def load(cls, path: str | Path | None = None, overrides: Mapping[str, str] | None = None) -> "RunConfig":
        """Read a config file (optional), then apply ``key=value`` string overrides."""
        values: dict[str, Any] = {}
        source = ""
        if path:
            path = Path(path)
            if not path.exists():
                raise ConfigError(f"config file not found: {path}")
            values = parse_config_text(path.read_text(encoding="utf-8"))
            source = str(path)
        for key, raw in (overrides or {}).items():
            values[key] = _parse_value(key, str(raw), None)
        return cls(values=values, source=source)

    @classmethod
    def from_env(cls, overrides: Mapping[str, str] | None = None) -> "RunConfig":
        merged: dict[str, str] = {}
        if os.getenv(ENV_OUTPUT_DIR, "").strip():
            merged["io.output"] = os.environ[ENV_OUTPUT_DIR].strip()
        if os.getenv(ENV_SEED, "").strip():
            merged["mcmc.seed"] = os.environ[ENV_SEED].strip()
        merged.update(overrides or {})
        return cls.load(os.getenv(ENV_CONFIG, "").strip() or None, merged)

    def snapshot(self) -> dict[str, Any]:
        return {key: list(value) if isinstance(value, tuple) else value for key, value in self.values.items()}

    @property
    def kind(self) -> str:
        return self["model.kind"]

    @property
    def seed(self) -> int:
        return int(self["mcmc.seed"])

    @property
    def output_dir(self) -> Path:
        return Path(self["io.output"])

    def input_paths(self) -> list[Path]:
        paths: list[Path] = []
        for key in INPUT_KEYS:
            value = self[key]
            for item in value if isinstance(value, tuple) else (value,):
                if item:
                    paths.append(Path(item))
        return paths

    def grid(self) -> GridSpec:
        try:
            return build_grid(
                (self["grid.xmin"], self["grid.ymin"], self["grid.xmax"], self["grid.ymax"]),
                self["grid.nx"],
                self["grid.ny"],
                self["grid.extension_factor"],
            )
        except InvalidInputError as exc:
            raise ConfigError(f"grid section: {exc}", key="grid") from exc

    def covariance(self) -> CovarianceModel:
        try:
            return CovarianceModel(
                family=self["cov.family"],
                sigma2=self["cov.sigma2"],
                phi=self["cov.phi"],
                kappa=self["cov.kappa"],
            )
        except InvalidInputError as exc:
            raise ConfigError(f"cov section: {exc}", key="cov") from exc

    def st_covariance(self) -> SeparableSTCovariance:
        return SeparableSTCovariance(spatial=self.covariance(), temporal_rho=self["cov.temporal_rho"])

    def priors(self) -> Priors:
        try:
            return Priors(
                log_sigma_mean=self["mcmc.prior_log_sigma_mean"],
                log_sigma_var=self["mcmc.prior_log_sigma_var"],
                log_phi_mean=self["mcmc.prior_log_phi_mean"],
                log_phi_var=self["mcmc.prior_log_phi_var"],
                beta_mean=self["mcmc.prior_beta_mean"],
                beta_var=self["mcmc.prior_beta_var"],
            )
        except InvalidInputError as exc:
            raise ConfigError(f"mcmc priors: {exc}", key="mcmc") from exc

    def sampler(self) -> SamplerConfig:
        try:
            return SamplerConfig(
                burnin=self["mcmc.burnin"],
                n_iterations=self["mcmc.iters"],
                thin=self["mcmc.thin"],
                target_accept=self["mcmc.target_accept"],
                c=self["mcmc.c"],
                adapt_rate=self["mcmc.adapt_rate"],
                h0=self["mcmc.h0"],
                priors=self.priors(),
                fix_theta=self["mcmc.fix_theta"],
                adapt_during_sampling=self["mcmc.adapt_during_sampling"],
            )
        except ConfigError:
            raise
        except InvalidInputError as exc:
            raise ConfigError(f"mcmc section: {exc}", key="mcmc") from exc
