"""LGCP model definitions, MCMC targets, forward simulation and moment functions.

Every target exposes the same surface to the sampler:

- ``gamma_shape``, ``n_beta``, ``beta_names``, ``n_theta``
- ``evaluate(gamma, beta, log_theta, counts=None) -> TargetEvaluation`` with the
  Poisson cell log-likelihood and its gradients (the Gamma gradient already
  carried through the covariance square root, prior terms excluded)
- ``cell_means``, ``observed_field``, ``initial_beta``, ``beta_preconditioner``
- ``augmented`` plus ``augment(cell_means, rng)`` for latent-count data

``log_theta`` is a flat vector of ``(log sigma, log phi)`` pairs, one pair per
independent covariance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import singledispatch
from typing import Callable, NamedTuple

import numpy as np
from scipy import integrate, linalg, special

from .covariance import CovarianceModel, SeparableSTCovariance, correlation
from .errors import InvalidInputError, NumericalOverflowError
from .gaussian_field import FieldOperator, field_operator, sample_field
from .grid import (
    CellCounts,
    GridSpec,
    PointPattern,
    RegionPartition,
    bin_points,
    region_mask,
)

MAX_LOG_MEAN = 700.0


# --------------------------------------------------------------------------
# model types
# --------------------------------------------------------------------------


def _offset_array(grid: GridSpec, offset: np.ndarray | None) -> np.ndarray:
    if offset is None:
        return np.ones(grid.shape)
    offset = np.asarray(offset, dtype=float)
    if offset.shape != grid.shape:
        raise InvalidInputError(f"offset shape {offset.shape} does not match grid {grid.shape}")
    if not np.isfinite(offset).all() or offset.min(initial=0.0) < 0:
        raise InvalidInputError("offset d(x) must be finite and >= 0")
    return offset


def _log_exposure(grid: GridSpec, offset: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(grid.cell_area * offset)


@dataclass(frozen=True, eq=False)
class UnitypeModel:
    """Lambda(x) = d(x) exp{z(x)'beta + S(x)} on a regular grid.

    ``covariates`` holds the non-intercept surfaces, shape ``(q, ny, nx)``;
    ``beta`` has ``q + 1`` entries with the intercept first.
    """

    grid: GridSpec
    cov: CovarianceModel
    beta: np.ndarray = field(default_factory=lambda: np.zeros(1))
    covariates: np.ndarray | None = None
    offset: np.ndarray | None = None
    covariate_names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        if self.covariates is None:
            covariates = np.zeros((0,) + self.grid.shape)
        else:
            covariates = np.asarray(self.covariates, dtype=float)
            if covariates.ndim == 2:
                covariates = covariates[None]
            if covariates.shape[1:] != self.grid.shape:
                raise InvalidInputError(
                    f"covariate surfaces have shape {covariates.shape[1:]}, grid is {self.grid.shape}"
                )
            if not np.isfinite(covariates).all():
                raise InvalidInputError("covariate surfaces must be finite on observation cells")
        if beta.shape[0] != covariates.shape[0] + 1:
            raise InvalidInputError(
                f"beta has {beta.shape[0]} entries but the design has {covariates.shape[0] + 1} columns"
            )
        names = tuple(self.covariate_names) or tuple(f"z{j + 1}" for j in range(covariates.shape[0]))
        if len(names) != covariates.shape[0]:
            raise InvalidInputError("covariate_names must name every covariate surface")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "covariates", covariates)
        object.__setattr__(self, "offset", _offset_array(self.grid, self.offset))
        object.__setattr__(self, "covariate_names", names)

    @property
    def design(self) -> np.ndarray:
        """Design tensor of shape ``(ny, nx, p)`` with a leading column of ones."""
        ones = np.ones((1,) + self.grid.shape)
        return np.moveaxis(np.concatenate([ones, self.covariates]), 0, -1)

    @property
    def beta_names(self) -> tuple[str, ...]:
        return ("intercept",) + self.covariate_names

    @property
    def log_exposure(self) -> np.ndarray:
        return _log_exposure(self.grid, self.offset)


@dataclass(frozen=True, eq=False)
class MultitypeModel:
    """Lambda_k(x) = d(x) exp{beta_k + S_k(x)}, k = 1..m, with S_0 fixed at zero.

    ``type_covs`` gives each type its own covariance; otherwise all types
    share ``cov``.
    """

    grid: GridSpec
    cov: CovarianceModel
    beta: np.ndarray
    offset: np.ndarray | None = None
    type_covs: tuple[CovarianceModel, ...] | None = None

    def __post_init__(self) -> None:
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        if beta.shape[0] < 2:
            raise InvalidInputError(f"a multitype model needs m >= 2 types, got {beta.shape[0]}")
        if self.type_covs is not None and len(self.type_covs) != beta.shape[0]:
            raise InvalidInputError("type_covs must give one covariance per type")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "offset", _offset_array(self.grid, self.offset))

    @property
    def n_types(self) -> int:
        return int(self.beta.shape[0])

    def covariance(self, k: int) -> CovarianceModel:
        return self.cov if self.type_covs is None else self.type_covs[k]

    @property
    def log_exposure(self) -> np.ndarray:
        return _log_exposure(self.grid, self.offset)


@dataclass(frozen=True, eq=False)
class STModel:
    """Lambda(x, t) = lambda0(x) mu0(t) exp{S(x, t)} over T integer time steps."""

    grid: GridSpec
    cov: SeparableSTCovariance
    time_steps: int
    baseline: np.ndarray | None = None
    temporal_baseline: np.ndarray | None = None

    def __post_init__(self) -> None:
        if int(self.time_steps) < 1:
            raise InvalidInputError(f"time_steps must be >= 1, got {self.time_steps}")
        object.__setattr__(self, "time_steps", int(self.time_steps))
        object.__setattr__(self, "baseline", _offset_array(self.grid, self.baseline))
        if self.temporal_baseline is None:
            temporal = np.ones(self.time_steps)
        else:
            temporal = np.asarray(self.temporal_baseline, dtype=float).reshape(-1)
            if temporal.shape[0] != self.time_steps:
                raise InvalidInputError(f"temporal baseline needs {self.time_steps} values, got {temporal.shape[0]}")
            if not np.isfinite(temporal).all() or temporal.min() < 0:
                raise InvalidInputError("temporal baseline mu0(t) must be finite and >= 0")
        object.__setattr__(self, "temporal_baseline", temporal)

    @property
    def log_exposure(self) -> np.ndarray:
        """Log of cell-area * lambda0 * mu0, shape ``(T, ny, nx)``."""
        with np.errstate(divide="ignore"):
            return _log_exposure(self.grid, self.baseline)[None] + np.log(self.temporal_baseline)[:, None, None]


# --------------------------------------------------------------------------
# Poisson cell likelihood
# --------------------------------------------------------------------------


class CellLikelihood(NamedTuple):
    value: float
    residual: np.ndarray
    mean: np.ndarray


def poisson_cell_loglik(
    counts: np.ndarray, log_mean: np.ndarray, mask: np.ndarray | None = None
) -> CellLikelihood:
    """Sum of y log(mu) - mu over masked cells; residual y - mu is zero off the mask."""
    counts = np.asarray(counts, dtype=float)
    log_mean = np.asarray(log_mean, dtype=float)
    if mask is None:
        mask = np.ones(log_mean.shape, dtype=bool)
    if np.isnan(log_mean).any():
        raise NumericalOverflowError("linear predictor is not a number", max_linear_predictor=float("nan"))
    finite = np.isfinite(log_mean)
    peak = float(log_mean[finite & mask].max(initial=-np.inf))
    if peak > MAX_LOG_MEAN or np.any(np.isposinf(log_mean) & mask):
        raise NumericalOverflowError(
            f"cell mean overflows: max linear predictor {peak:.1f}", max_linear_predictor=peak
        )
    mean = np.where(mask, np.exp(log_mean), 0.0)
    y = np.where(mask, counts, 0.0)
    if np.any((y > 0) & (mean <= 0)):
        return CellLikelihood(value=-math.inf, residual=y - mean, mean=mean)
    safe_log = np.where(finite, log_mean, 0.0)
    value = float(np.sum(np.where(y > 0, y * safe_log, 0.0)) - np.sum(mean))
    return CellLikelihood(value=value, residual=y - mean, mean=mean)


def _observation_counts(grid: GridSpec, counts: CellCounts | np.ndarray) -> np.ndarray:
    if isinstance(counts, CellCounts):
        return grid.restrict(counts.counts)
    counts = np.asarray(counts)
    if counts.shape[-2:] == grid.extended_shape:
        return grid.restrict(counts)
    return counts


def cell_loglik(
    model: UnitypeModel, gamma: np.ndarray, counts: CellCounts | np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """Poisson cell log-likelihood with gradients wrt S (observation cells) and beta."""
    grid = model.grid
    y = _observation_counts(grid, counts)
    s = grid.restrict(field_operator(model.cov, grid).apply(gamma)) + model.cov.mean_offset
    design = model.design
    result = poisson_cell_loglik(y, model.log_exposure + design @ model.beta + s)
    grad_beta = np.einsum("yxp,yx->p", design, result.residual)
    return result.value, result.residual, grad_beta


def multitype_loglik(
    model: MultitypeModel, gammas: np.ndarray, typed_counts: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """Sum of per-type Poisson cell log-likelihoods.

    Returns the value, per-type gradients wrt S_k (shape ``(m, ny, nx)``) and
    wrt the intercepts beta_k.
    """
    grid = model.grid
    gammas = np.asarray(gammas, dtype=float)
    typed_counts = np.asarray(typed_counts)
    if gammas.shape[0] != model.n_types or typed_counts.shape[0] != model.n_types:
        raise InvalidInputError(f"expected {model.n_types} type fields and count layers")
    fields = _multitype_fields(model, gammas)
    log_mean = model.log_exposure[None] + model.beta[:, None, None] + fields
    result = poisson_cell_loglik(typed_counts, log_mean)
    return result.value, result.residual, result.residual.sum(axis=(1, 2))


def _multitype_fields(model: MultitypeModel, gammas: np.ndarray) -> np.ndarray:
    grid = model.grid
    layers = []
    for k in range(model.n_types):
        cov = model.covariance(k)
        layers.append(grid.restrict(field_operator(cov, grid).apply(gammas[k])) + cov.mean_offset)
    return np.stack(layers)


# --------------------------------------------------------------------------
# spatio-temporal evolution
# --------------------------------------------------------------------------


def _ar_coefficients(rho: float) -> tuple[float, float]:
    return rho, math.sqrt(1.0 - rho * rho)


def st_evolve(
    st_model: STModel, gamma_innovations: np.ndarray, cov: CovarianceModel | None = None
) -> np.ndarray:
    """S(., t) = rho S(., t-1) + sqrt(1 - rho^2) L W_t plus the mean offset.

    ``gamma_innovations`` has shape ``(T, NY, NX)``; W_1 seeds a stationary
    initial field. Returns extended fields of the same shape.
    """
    rho = st_model.cov.temporal_rho
    if not abs(rho) < 1:
        raise InvalidInputError(f"temporal_rho must satisfy |rho| < 1, got {rho}")
    cov = cov or st_model.cov.spatial
    w = np.asarray(gamma_innovations, dtype=float)
    if w.ndim != 3 or w.shape[0] != st_model.time_steps:
        raise InvalidInputError(f"expected innovations of shape (T={st_model.time_steps}, NY, NX), got {w.shape}")
    a, b = _ar_coefficients(rho)
    # L is linear, so run the recursion on white noise and apply L once
    u = np.empty_like(w)
    u[0] = w[0]
    for t in range(1, w.shape[0]):
        u[t] = a * u[t - 1] + b * w[t]
    return field_operator(cov, st_model.grid).apply(u) + cov.mean_offset


def st_transport(st_model: STModel, grad_s: np.ndarray, cov: CovarianceModel | None = None) -> np.ndarray:
    """Adjoint of ``st_evolve``: gradients wrt S(., t) to gradients wrt W_t."""
    cov = cov or st_model.cov.spatial
    a, b = _ar_coefficients(st_model.cov.temporal_rho)
    g = np.asarray(grad_s, dtype=float)
    acc = np.empty_like(g)
    acc[-1] = g[-1]
    for t in range(g.shape[0] - 2, -1, -1):
        acc[t] = g[t] + a * acc[t + 1]
    acc[1:] *= b
    return field_operator(cov, st_model.grid).transport(acc)


# --------------------------------------------------------------------------
# forward simulation
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Simulation:
    pattern: PointPattern
    field: np.ndarray
    cell_means: np.ndarray
    counts: np.ndarray


def _check_means(log_mean: np.ndarray) -> np.ndarray:
    finite = log_mean[np.isfinite(log_mean)]
    peak = float(finite.max(initial=-np.inf))
    if peak > MAX_LOG_MEAN or np.isnan(log_mean).any():
        raise NumericalOverflowError(f"simulated intensity overflows at linear predictor {peak:.1f}", peak)
    return np.exp(log_mean)


def _place_points(
    grid: GridSpec, counts: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Uniform locations inside each cell; returns points and the flat layer index of each."""
    flat = counts.reshape(-1)
    cell = np.repeat(np.arange(flat.size), flat)
    layer, rest = np.divmod(cell, grid.n_cells)
    iy, ix = np.divmod(rest, grid.nx)
    jitter = rng.random((cell.size, 2))
    xs = grid.window.xmin + (ix + jitter[:, 0]) * grid.dx
    ys = grid.window.ymin + (iy + jitter[:, 1]) * grid.dy
    return np.column_stack([xs, ys]), layer


@singledispatch
def simulate(model, rng: np.random.Generator) -> Simulation:
    raise InvalidInputError(f"cannot simulate {type(model).__name__}")


@simulate.register
def _(model: UnitypeModel, rng: np.random.Generator) -> Simulation:
    grid = model.grid
    latent = sample_field(model.cov, grid, rng)
    mean = _check_means(model.log_exposure + model.design @ model.beta + latent.observed)
    counts = rng.poisson(mean)
    points, _ = _place_points(grid, counts, rng)
    pattern = PointPattern(points=points, window=grid.window)
    return Simulation(pattern=pattern, field=latent.values, cell_means=mean, counts=counts)


@simulate.register
def _(model: MultitypeModel, rng: np.random.Generator) -> Simulation:
    grid = model.grid
    gammas = rng.standard_normal((model.n_types,) + grid.extended_shape)
    extended = np.stack(
        [
            field_operator(model.covariance(k), grid).apply(gammas[k]) + model.covariance(k).mean_offset
            for k in range(model.n_types)
        ]
    )
    log_mean = model.log_exposure[None] + model.beta[:, None, None] + grid.restrict(extended)
    mean = _check_means(log_mean)
    counts = rng.poisson(mean)
    points, layer = _place_points(grid, counts, rng)
    pattern = PointPattern(points=points, window=grid.window, marks=layer + 1, n_types=model.n_types)
    return Simulation(pattern=pattern, field=extended, cell_means=mean, counts=counts)


@simulate.register
def _(model: STModel, rng: np.random.Generator) -> Simulation:
    grid = model.grid
    w = rng.standard_normal((model.time_steps,) + grid.extended_shape)
    extended = st_evolve(model, w)
    mean = _check_means(model.log_exposure + grid.restrict(extended))
    counts = rng.poisson(mean)
    points, layer = _place_points(grid, counts, rng)
    times = layer + rng.random(layer.size)
    pattern = PointPattern(points=points, window=grid.window, times=times)
    return Simulation(pattern=pattern, field=extended, cell_means=mean, counts=counts)


# --------------------------------------------------------------------------
# moment functions
# --------------------------------------------------------------------------


def theoretical_K(cov: CovarianceModel, beta: float | None, u: np.ndarray | float) -> np.ndarray | float:
    """K(u) = pi u^2 + 2 pi int_0^u (exp{sigma^2 r(v)} - 1) v dv.

    The intensity cancels, so ``beta`` only documents the parameter set.
    """
    scalar = np.ndim(u) == 0
    u_arr = np.atleast_1d(np.asarray(u, dtype=float))
    if np.any(u_arr < 0):
        raise InvalidInputError("K(u) needs u >= 0")
    base = np.pi * u_arr**2
    if cov.sigma2 == 0:
        return float(base[0]) if scalar else base

    def integrand(v: float) -> float:
        return math.expm1(cov.sigma2 * float(correlation(cov, v))) * v

    out = base.copy()
    for i, ui in enumerate(u_arr):
        if ui > 0:
            value, _ = integrate.quad(integrand, 0.0, ui, epsabs=1e-8, epsrel=1e-10, limit=200)
            out[i] += 2.0 * np.pi * value
    return float(out[0]) if scalar else out


def cross_covariance_density(
    sigma1: float,
    sigma2: float,
    r12: Callable[[np.ndarray], np.ndarray] | float,
    u: np.ndarray | float,
    lam1: float = 1.0,
    lam2: float = 1.0,
) -> np.ndarray | float:
    """g12(u) = lam1 lam2 [exp{sigma1 sigma2 r12(u)} - 1]."""
    u = np.asarray(u, dtype=float)
    if np.any(u < 0):
        raise InvalidInputError("cross covariance density needs u >= 0")
    r = r12(u) if callable(r12) else np.full(u.shape, float(r12))
    g = lam1 * lam2 * np.expm1(sigma1 * sigma2 * np.asarray(r, dtype=float))
    return float(g) if g.ndim == 0 else g


def aggregate_counts(cell_counts: np.ndarray, partition: RegionPartition) -> dict[int, int]:
    """Region totals Y_i from per-cell counts over the observation grid."""
    cell_counts = np.asarray(cell_counts)
    if cell_counts.shape != partition.region_of_cell.shape:
        raise InvalidInputError("cell counts and region map differ in shape")
    ids = sorted(set(partition.region_totals) | set(np.unique(partition.region_of_cell[partition.region_of_cell > 0]).tolist()))
    return {int(i): int(cell_counts[partition.region_of_cell == i].sum()) for i in ids}


def type_probabilities(beta: np.ndarray, fields: np.ndarray) -> np.ndarray:
    """p_k = Lambda_k / sum_j Lambda_j; the shared offset and S_0 cancel."""
    beta = np.asarray(beta, dtype=float)
    fields = np.asarray(fields, dtype=float)
    shape = (beta.shape[0],) + (1,) * (fields.ndim - 1)
    return special.softmax(beta.reshape(shape) + fields, axis=0)


# --------------------------------------------------------------------------
# sampler targets
# --------------------------------------------------------------------------


class TargetEvaluation(NamedTuple):
    loglik: float
    grad_gamma: np.ndarray
    grad_beta: np.ndarray
    cell_means: np.ndarray


def _theta_cov(template: CovarianceModel, log_theta: np.ndarray, pair: int = 0) -> CovarianceModel:
    log_sigma, log_phi = log_theta[2 * pair], log_theta[2 * pair + 1]
    return template.with_params(math.exp(2.0 * log_sigma), math.exp(log_phi))


def _glm_preconditioner(design: np.ndarray, weights: np.ndarray) -> np.ndarray:
    z = design.reshape(-1, design.shape[-1])
    w = weights.reshape(-1)
    information = z.T @ (z * w[:, None])
    if not np.isfinite(information).all() or np.trace(information) <= 0:
        return np.eye(z.shape[1])
    return linalg.pinvh(information)


class UnitypeTarget:
    """Unitype LGCP (with optional covariates and offset) observed as cell counts."""

    kind = "unitype"
    augmented = False

    def __init__(
        self,
        model: UnitypeModel,
        counts: CellCounts | np.ndarray | None,
        mask: np.ndarray | None = None,
    ) -> None:
        self.model = model
        self.grid = model.grid
        self.counts = None if counts is None else _observation_counts(model.grid, counts).astype(float)
        self.mask = np.ones(model.grid.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        self.design = model.design
        self.log_exposure = model.log_exposure

    n_theta = 2

    @property
    def gamma_shape(self) -> tuple[int, ...]:
        return self.grid.extended_shape

    @property
    def n_beta(self) -> int:
        return int(self.model.beta.shape[0])

    @property
    def beta_names(self) -> tuple[str, ...]:
        return self.model.beta_names

    def covariances(self, log_theta: np.ndarray) -> list[CovarianceModel]:
        return [_theta_cov(self.model.cov, log_theta)]

    def _field(self, gamma: np.ndarray, log_theta: np.ndarray) -> tuple[FieldOperator, np.ndarray]:
        cov = _theta_cov(self.model.cov, log_theta)
        operator = field_operator(cov, self.grid)
        return operator, self.grid.restrict(operator.apply(gamma)) + cov.mean_offset

    def observed_field(self, gamma: np.ndarray, log_theta: np.ndarray) -> np.ndarray:
        return self._field(gamma, log_theta)[1]

    def _log_mean(self, s: np.ndarray, beta: np.ndarray) -> np.ndarray:
        return self.log_exposure + self.design @ beta + s

    def cell_means(self, gamma: np.ndarray, beta: np.ndarray, log_theta: np.ndarray) -> np.ndarray:
        log_mean = self._log_mean(self.observed_field(gamma, log_theta), beta)
        return np.where(self.mask, _check_means(log_mean), 0.0)

    def evaluate(
        self, gamma: np.ndarray, beta: np.ndarray, log_theta: np.ndarray, counts: np.ndarray | None = None
    ) -> TargetEvaluation:
        y = self.counts if counts is None else counts
        if y is None:
            raise InvalidInputError("target has no counts; augment first")
        operator, s = self._field(gamma, log_theta)
        result = poisson_cell_loglik(y, self._log_mean(s, beta), self.mask)
        grad_gamma = operator.transport(self.grid.embed(result.residual))
        grad_beta = np.einsum("yxp,yx->p", self.design, result.residual)
        return TargetEvaluation(result.value, grad_gamma, grad_beta, result.mean)

    def total_count(self) -> float:
        return float(np.sum(self.counts[self.mask]))

    def initial_beta(self) -> np.ndarray:
        exposure = float(np.sum(np.exp(self.log_exposure)[self.mask]))
        beta = np.zeros(self.n_beta)
        beta[0] = math.log(max(self.total_count(), 0.5) / exposure)
        return beta

    def beta_preconditioner(self) -> np.ndarray:
        weights = np.where(self.mask, np.exp(self.log_exposure + self.initial_beta()[0]), 0.0)
        return _glm_preconditioner(self.design, weights)

    def augment(self, cell_means: np.ndarray, rng: np.random.Generator) -> np.ndarray | None:
        return None


class AggregatedTarget(UnitypeTarget):
    """Counts known only as region totals; cell counts are latent and imputed by Gibbs steps."""

    kind = "aggregated"
    augmented = True

    def __init__(self, model: UnitypeModel, partition: RegionPartition) -> None:
        super().__init__(model, None, mask=partition.region_of_cell > 0)
        self.partition = partition
        self.cells = region_mask(partition, model.grid)
        self.audit_checks = 0

    def total_count(self) -> float:
        return float(sum(self.partition.region_totals.values()))

    def augment(self, cell_means: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        from .mcmc import gibbs_multinomial_step

        counts = gibbs_multinomial_step(self.partition, cell_means, rng, cells=self.cells)
        self.audit(counts)
        return counts.astype(float)

    def audit(self, counts: np.ndarray) -> None:
        flat = counts.reshape(-1)
        for region_id, cells in self.cells.by_region.items():
            expected = self.partition.region_totals.get(region_id, 0)
            if int(flat[cells].sum()) != expected:
                raise InvalidInputError(
                    f"augmented counts for region {region_id} sum to {int(flat[cells].sum())}, expected {expected}"
                )
        self.audit_checks += 1


class MultitypeTarget:
    """m-type LGCP with S_0 fixed at zero; theta is shared or one pair per type."""

    kind = "multitype"
    design = None
    augmented = False

    def __init__(self, model: MultitypeModel, typed_counts: np.ndarray, per_type: bool = False) -> None:
        self.model = model
        self.grid = model.grid
        self.counts = np.asarray(typed_counts, dtype=float)
        if self.counts.shape != (model.n_types,) + model.grid.shape:
            raise InvalidInputError(f"typed counts must have shape {(model.n_types,) + model.grid.shape}")
        self.per_type = per_type
        self.log_exposure = model.log_exposure

    @property
    def gamma_shape(self) -> tuple[int, ...]:
        return (self.model.n_types,) + self.grid.extended_shape

    @property
    def n_beta(self) -> int:
        return self.model.n_types

    @property
    def beta_names(self) -> tuple[str, ...]:
        return tuple(f"type{k + 1}" for k in range(self.model.n_types))

    @property
    def n_theta(self) -> int:
        return 2 * self.model.n_types if self.per_type else 2

    def covariances(self, log_theta: np.ndarray) -> list[CovarianceModel]:
        m = self.model.n_types
        return [
            _theta_cov(self.model.covariance(k), log_theta, k if self.per_type else 0) for k in range(m)
        ]

    def _fields(self, gamma: np.ndarray, log_theta: np.ndarray) -> tuple[list[FieldOperator], np.ndarray]:
        operators, layers = [], []
        for k, cov in enumerate(self.covariances(log_theta)):
            operator = field_operator(cov, self.grid)
            operators.append(operator)
            layers.append(self.grid.restrict(operator.apply(gamma[k])) + cov.mean_offset)
        return operators, np.stack(layers)

    def observed_field(self, gamma: np.ndarray, log_theta: np.ndarray) -> np.ndarray:
        return self._fields(gamma, log_theta)[1]

    def cell_means(self, gamma: np.ndarray, beta: np.ndarray, log_theta: np.ndarray) -> np.ndarray:
        fields = self.observed_field(gamma, log_theta)
        return _check_means(self.log_exposure[None] + beta[:, None, None] + fields)

    def evaluate(
        self, gamma: np.ndarray, beta: np.ndarray, log_theta: np.ndarray, counts: np.ndarray | None = None
    ) -> TargetEvaluation:
        y = self.counts if counts is None else counts
        operators, fields = self._fields(gamma, log_theta)
        result = poisson_cell_loglik(y, self.log_exposure[None] + beta[:, None, None] + fields)
        grad_gamma = np.stack(
            [operators[k].transport(self.grid.embed(result.residual[k])) for k in range(len(operators))]
        )
        return TargetEvaluation(result.value, grad_gamma, result.residual.sum(axis=(1, 2)), result.mean)

    def initial_beta(self) -> np.ndarray:
        exposure = float(np.exp(self.log_exposure).sum())
        totals = self.counts.sum(axis=(1, 2))
        return np.log(np.maximum(totals, 0.5) / exposure)

    def beta_preconditioner(self) -> np.ndarray:
        exposure = float(np.exp(self.log_exposure).sum())
        expected = np.exp(self.initial_beta()) * exposure
        return np.diag(1.0 / np.maximum(expected, 1e-12))

    def augment(self, cell_means: np.ndarray, rng: np.random.Generator) -> None:
        return None


class SpaceTimeTarget:
    """Separable spatio-temporal LGCP with known baselines; no regression block."""

    kind = "spacetime"
    design = None
    augmented = False
    n_beta = 0
    beta_names: tuple[str, ...] = ()
    n_theta = 2

    def __init__(self, model: STModel, counts: np.ndarray) -> None:
        self.model = model
        self.grid = model.grid
        self.counts = np.asarray(counts, dtype=float)
        if self.counts.shape != (model.time_steps,) + model.grid.shape:
            raise InvalidInputError(f"space-time counts must have shape {(model.time_steps,) + model.grid.shape}")
        self.log_exposure = model.log_exposure

    @property
    def gamma_shape(self) -> tuple[int, ...]:
        return (self.model.time_steps,) + self.grid.extended_shape

    def covariances(self, log_theta: np.ndarray) -> list[CovarianceModel]:
        return [_theta_cov(self.model.cov.spatial, log_theta)]

    def observed_field(self, gamma: np.ndarray, log_theta: np.ndarray) -> np.ndarray:
        cov = self.covariances(log_theta)[0]
        return self.grid.restrict(st_evolve(self.model, gamma, cov))

    def cell_means(self, gamma: np.ndarray, beta: np.ndarray, log_theta: np.ndarray) -> np.ndarray:
        return _check_means(self.log_exposure + self.observed_field(gamma, log_theta))

    def evaluate(
        self, gamma: np.ndarray, beta: np.ndarray, log_theta: np.ndarray, counts: np.ndarray | None = None
    ) -> TargetEvaluation:
        y = self.counts if counts is None else counts
        cov = self.covariances(log_theta)[0]
        s = self.grid.restrict(st_evolve(self.model, gamma, cov))
        result = poisson_cell_loglik(y, self.log_exposure + s)
        grad_gamma = st_transport(self.model, self.grid.embed(result.residual), cov)
        return TargetEvaluation(result.value, grad_gamma, np.zeros(0), result.mean)

    def initial_beta(self) -> np.ndarray:
        return np.zeros(0)

    def beta_preconditioner(self) -> np.ndarray:
        return np.zeros((0, 0))

    def augment(self, cell_means: np.ndarray, rng: np.random.Generator) -> None:
        return None


def unitype_target_from_pattern(model: UnitypeModel, pattern: PointPattern) -> UnitypeTarget:
    return UnitypeTarget(model, bin_points(pattern, model.grid))
