"""Posterior functionals over retained draws: quantile and exceedance rasters,
type-probability surfaces, segregation sets and aggregated risk summaries.

Functionals are evaluated from stored S and beta draws at export time.
``relative_risk`` is the covariate-adjusted risk exp{S(x)}; ``intensity`` is
Lambda(x) per unit area including offset and covariates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import InsufficientSamplesError, InvalidInputError
from .grid import GridSpec
from .mcmc import PosteriorSamples
from .models import type_probabilities

FUNCTIONALS = ("intensity", "exp_s", "relative_risk")
DIRECTIONS = (">", "<")
MIN_SAMPLES = 100
NODATA = -9999.0


@dataclass(frozen=True, eq=False)
class Raster:
    grid: GridSpec
    values: np.ndarray
    nodata: float = NODATA
    name: str = ""

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.grid.shape:
            raise InvalidInputError(f"raster shape {values.shape} does not match grid {self.grid.shape}")
        object.__setattr__(self, "values", values)

    def filled(self) -> np.ndarray:
        return np.where(np.isfinite(self.values), self.values, self.nodata)


@dataclass(frozen=True, eq=False)
class SegregationSet:
    type_index: int
    c: float
    q: float
    cells: np.ndarray
    probability: np.ndarray

    @property
    def size(self) -> int:
        return int(self.cells.size)

    def mask(self) -> np.ndarray:
        mask = np.zeros(self.probability.size, dtype=bool)
        mask[self.cells] = True
        return mask.reshape(self.probability.shape)


def _require(samples: PosteriorSamples, min_samples: int) -> None:
    if samples.fields is None:
        raise InvalidInputError("samples carry no field draws")
    if samples.n_draws < min_samples:
        raise InsufficientSamplesError(f"need at least {min_samples} retained samples, got {samples.n_draws}")


def _layer_index(samples: PosteriorSamples, layer: int | None) -> int | None:
    if samples.kind == "multitype":
        if layer is None:
            raise InvalidInputError("multitype functionals need a type layer (0-based)")
        return layer
    if samples.kind == "spacetime":
        return -1 if layer is None else layer
    return None


def evaluate_functional(samples: PosteriorSamples, functional: str, layer: int | None = None) -> np.ndarray:
    """Per-draw values of a functional on observation cells, shape ``(draws, ny, nx)``."""
    if functional not in FUNCTIONALS:
        raise InvalidInputError(f"unknown functional {functional!r}; expected one of {FUNCTIONALS}")
    if samples.fields is None or samples.grid is None:
        raise InvalidInputError("samples carry no field draws")
    index = _layer_index(samples, layer)
    s = samples.fields if index is None else samples.fields[:, index]
    if functional in ("exp_s", "relative_risk"):
        return np.exp(s)

    grid = samples.grid
    if samples.log_exposure is None:
        raise InvalidInputError("intensity needs the exposure surface of the fitted model")
    exposure = samples.log_exposure if index is None or samples.kind != "spacetime" else samples.log_exposure[index]
    log_density = exposure - math.log(grid.cell_area)
    if samples.kind == "multitype":
        trend = samples.beta[:, index][:, None, None]
    elif samples.design is not None and samples.beta.shape[1]:
        trend = np.einsum("yxp,dp->dyx", samples.design, samples.beta)
    else:
        trend = 0.0
    return np.exp(log_density + trend + s)


def nearest_rank_quantile(values: np.ndarray, p: float, axis: int = 0) -> np.ndarray:
    """Order statistic at rank ceil(p N) (1-based), no interpolation."""
    if not 0 <= p <= 1:
        raise InvalidInputError(f"quantile level must lie in [0, 1], got {p}")
    ordered = np.sort(np.asarray(values, dtype=float), axis=axis)
    n = ordered.shape[axis]
    rank = min(max(math.ceil(p * n) - 1, 0), n - 1)
    return np.take(ordered, rank, axis=axis)


def percentile_surface(
    samples: PosteriorSamples,
    functional: str = "exp_s",
    p: float = 0.5,
    layer: int | None = None,
    min_samples: int = MIN_SAMPLES,
) -> Raster:
    _require(samples, min_samples)
    values = evaluate_functional(samples, functional, layer)
    return Raster(samples.grid, nearest_rank_quantile(values, p), name=f"{functional}_p{p:g}")


def exceedance_probability(
    samples: PosteriorSamples,
    functional: str = "exp_s",
    threshold: float = 1.0,
    direction: str = ">",
    layer: int | None = None,
    min_samples: int = MIN_SAMPLES,
) -> Raster:
    if direction not in DIRECTIONS:
        raise InvalidInputError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    _require(samples, min_samples)
    values = evaluate_functional(samples, functional, layer)
    hit = values > threshold if direction == ">" else values < threshold
    tag = "gt" if direction == ">" else "lt"
    return Raster(samples.grid, hit.mean(axis=0), name=f"{functional}_{tag}{threshold:g}")


def exceedance_maps(
    samples: PosteriorSamples,
    thresholds: Sequence[float],
    functional: str = "exp_s",
    direction: str = ">",
    layer: int | None = None,
    min_samples: int = MIN_SAMPLES,
) -> list[Raster]:
    return [
        exceedance_probability(samples, functional, t, direction, layer, min_samples) for t in thresholds
    ]


def _type_probability_draws(samples: PosteriorSamples) -> np.ndarray:
    if samples.kind != "multitype":
        raise InvalidInputError("type probabilities need multitype samples")
    # beta (draws, m) against fields (draws, m, ny, nx): softmax over the type axis
    logits = samples.beta[:, :, None, None] + samples.fields
    return type_probabilities(np.zeros(logits.shape[1]), np.moveaxis(logits, 1, 0))


def type_probability_surfaces(samples: PosteriorSamples, min_samples: int = MIN_SAMPLES) -> list[Raster]:
    """Posterior mean of p_k(x) for each type k; the rasters sum to one per cell."""
    _require(samples, min_samples)
    probs = _type_probability_draws(samples).mean(axis=1)
    return [Raster(samples.grid, probs[k], name=f"p_type{k + 1}") for k in range(probs.shape[0])]


def segregation_sets(
    samples: PosteriorSamples,
    c: float = 0.8,
    q_list: Sequence[float] = (0.6, 0.7, 0.8, 0.9),
    min_samples: int = MIN_SAMPLES,
) -> list[SegregationSet]:
    """A_k(c, q): cells where P{p_k(x) > c | X} > q, for every type and every q."""
    if not 0 < c < 1:
        raise InvalidInputError(f"dominance threshold c must lie in (0, 1), got {c}")
    for q in q_list:
        if not 0 <= q < 1:
            raise InvalidInputError(f"confidence q must lie in [0, 1), got {q}")
    _require(samples, min_samples)
    probs = _type_probability_draws(samples)
    out = []
    for k in range(probs.shape[0]):
        dominance = (probs[k] > c).mean(axis=0)
        for q in q_list:
            out.append(
                SegregationSet(
                    type_index=k + 1,
                    c=float(c),
                    q=float(q),
                    cells=np.flatnonzero(dominance.reshape(-1) > q),
                    probability=dominance,
                )
            )
    return out


class RiskReport(NamedTuple):
    effects: list[dict[str, float | str]]
    relative_risk: Raster
    log_variance: Raster
    exceedance: Raster


def aggregated_risk_report(
    samples: PosteriorSamples,
    covariate_names: Sequence[str] | None = None,
    threshold: float = 1.1,
    min_samples: int = MIN_SAMPLES,
) -> RiskReport:
    """Multiplicative covariate effects exp(beta_j) with 2.5/50/97.5% quantiles, plus risk rasters."""
    _require(samples, min_samples)
    names = list(samples.beta_names)
    wanted = list(covariate_names) if covariate_names is not None else [n for n in names if n != "intercept"]
    effects = []
    for name in wanted:
        if name not in names:
            raise InvalidInputError(f"no coefficient named {name!r}; have {names}")
        draws = np.exp(samples.beta[:, names.index(name)])
        effects.append(
            {
                "parameter": name,
                "q0.500": float(nearest_rank_quantile(draws, 0.5)),
                "q0.025": float(nearest_rank_quantile(draws, 0.025)),
                "q0.975": float(nearest_rank_quantile(draws, 0.975)),
            }
        )
    risk = evaluate_functional(samples, "relative_risk")
    variance = np.maximum(risk.var(axis=0), np.finfo(float).tiny)
    return RiskReport(
        effects=effects,
        relative_risk=Raster(samples.grid, risk.mean(axis=0), name="relative_risk_mean"),
        log_variance=Raster(samples.grid, np.log(variance), name="relative_risk_log_variance"),
        exceedance=Raster(samples.grid, (risk > threshold).mean(axis=0), name=f"relative_risk_gt{threshold:g}"),
    )
