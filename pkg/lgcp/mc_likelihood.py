"""Monte Carlo likelihood ratios from simulations at a single reference theta0.

The estimator combines conditional draws of S given the data at theta0 with
joint draws of (X, S) at theta0:

    L(theta) = log mean_j r(X, S_j | theta, theta0) - log mean_j r(X_j, S'_j | theta, theta0)

where r is the ratio of complete-data densities. It is zero at theta0 by
construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy import fft, optimize, special

from .errors import EmbeddingError, InvalidInputError, NumericalOverflowError
from .gaussian_field import field_operator
from .grid import GridSpec
from .mcmc import ChainInit, Priors, SamplerConfig, choose_thin, run_chain
from .models import MAX_LOG_MEAN, UnitypeModel, UnitypeTarget

MIN_ESS = 5.0
PARAMETERS = ("beta", "sigma", "phi")


@dataclass(frozen=True, eq=False)
class MCTheta:
    beta: np.ndarray
    sigma: float
    phi: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "beta", np.atleast_1d(np.asarray(self.beta, dtype=float)))
        if not (self.sigma > 0 and self.phi > 0):
            raise InvalidInputError(f"sigma and phi must be > 0, got sigma={self.sigma} phi={self.phi}")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.beta, [math.log(self.sigma), math.log(self.phi)]])

    @classmethod
    def from_vector(cls, x: np.ndarray) -> "MCTheta":
        return cls(beta=np.asarray(x[:-2]), sigma=math.exp(x[-2]), phi=math.exp(x[-1]))

    def same_covariance(self, other: "MCTheta") -> bool:
        return self.sigma == other.sigma and self.phi == other.phi

    def to_dict(self) -> dict[str, object]:
        return {"beta": self.beta.tolist(), "sigma": self.sigma, "phi": self.phi}


def _gaussian_log_density(grid: GridSpec, model: UnitypeModel, fields: np.ndarray, theta: MCTheta) -> np.ndarray:
    """Per-draw circulant Gaussian log-density of extended fields, batched over axis 0."""
    cov = model.cov.with_params(theta.sigma**2, theta.phi)
    eigenvalues = field_operator(cov, grid).eigenvalues
    if np.any(eigenvalues <= 0):
        raise EmbeddingError(
            f"covariance at sigma={theta.sigma:.4g}, phi={theta.phi:.4g} is singular on the torus",
            deficit=float(-eigenvalues.min()),
        )
    n = eigenvalues.size
    spectrum = fft.fft2(fields - cov.mean_offset, axes=(-2, -1))
    quad = np.sum(np.abs(spectrum) ** 2 / eigenvalues, axis=(-2, -1)) / n
    log_det = float(np.sum(np.log(eigenvalues)))
    return -0.5 * quad - 0.5 * log_det - 0.5 * n * math.log(2.0 * math.pi)


def _poisson_part(model: UnitypeModel, counts: np.ndarray, fields: np.ndarray, theta: MCTheta) -> np.ndarray:
    """Per-draw Poisson cell log-likelihood, batched over axis 0."""
    log_mean = model.log_exposure + model.design @ theta.beta + model.grid.restrict(fields)
    finite = np.isfinite(log_mean)
    peak = float(log_mean[finite].max(initial=-np.inf))
    if peak > MAX_LOG_MEAN:
        raise NumericalOverflowError(f"cell mean overflows: max linear predictor {peak:.1f}", peak)
    y = np.broadcast_to(np.asarray(counts, dtype=float), log_mean.shape)
    with np.errstate(invalid="ignore"):
        terms = np.where(y > 0, y * np.where(finite, log_mean, -np.inf), 0.0) - np.exp(log_mean)
    return terms.sum(axis=(-2, -1))


def log_ratio_r(
    model: UnitypeModel,
    counts: np.ndarray,
    field: np.ndarray,
    theta: MCTheta,
    theta0: MCTheta,
) -> float | np.ndarray:
    """log f(X, S; theta) - log f(X, S; theta0) for complete data.

    ``field`` is the extended field S (or a stack of them along axis 0).
    """
    fields = np.asarray(field, dtype=float)
    single = fields.ndim == 2
    if single:
        fields = fields[None]
        counts = np.asarray(counts)[None] if np.ndim(counts) == 2 else counts
    value = _poisson_part(model, counts, fields, theta) - _poisson_part(model, counts, fields, theta0)
    if not theta.same_covariance(theta0):
        value = value + _gaussian_log_density(model.grid, model, fields, theta)
        value = value - _gaussian_log_density(model.grid, model, fields, theta0)
    return float(value[0]) if single else value


@dataclass(frozen=True, eq=False)
class MCLikelihoodPlan:
    model: UnitypeModel
    theta0: MCTheta
    conditional_fields: np.ndarray
    joint_counts: np.ndarray
    joint_fields: np.ndarray
    thin: int = 1
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.conditional_fields.shape[0] < 1 or self.joint_fields.shape[0] < 1:
            raise InvalidInputError("a Monte Carlo likelihood plan needs s >= 1 draws of each kind")
        if self.joint_counts.shape[0] != self.joint_fields.shape[0]:
            raise InvalidInputError("joint draws need one count layer per field")

    @property
    def s(self) -> int:
        return int(self.conditional_fields.shape[0])


class MCLikelihood(NamedTuple):
    value: float
    ess_conditional: float
    ess_joint: float
    warnings: list[str]


def _log_mean_exp(values: np.ndarray) -> tuple[float, float]:
    """log of the mean of exp(values) and the effective sample size of its weights."""
    log_sum = float(special.logsumexp(values))
    weights = np.exp(values - values.max())
    ess = float(weights.sum() ** 2 / np.sum(weights**2))
    return log_sum - math.log(values.shape[0]), ess


def mc_loglik(plan: MCLikelihoodPlan, counts: np.ndarray, theta: MCTheta) -> MCLikelihood:
    """Monte Carlo log-likelihood ratio L(theta) relative to the plan's theta0."""
    if np.array_equal(theta.as_vector(), plan.theta0.as_vector()):
        return MCLikelihood(0.0, float(plan.s), float(plan.joint_fields.shape[0]), [])
    counts = np.asarray(counts, dtype=float)
    conditional = log_ratio_r(plan.model, counts, plan.conditional_fields, theta, plan.theta0)
    joint = log_ratio_r(plan.model, plan.joint_counts, plan.joint_fields, theta, plan.theta0)
    first, ess_c = _log_mean_exp(conditional)
    second, ess_j = _log_mean_exp(joint)
    warnings = []
    if ess_c < MIN_ESS:
        warnings.append(f"conditional weights have effective sample size {ess_c:.1f} < {MIN_ESS:g}")
    if ess_j < MIN_ESS:
        warnings.append(f"joint weights have effective sample size {ess_j:.1f} < {MIN_ESS:g}")
    return MCLikelihood(first - second, ess_c, ess_j, warnings)


@dataclass(frozen=True, eq=False)
class MCMLEResult:
    theta: MCTheta
    value: float
    ess_conditional: float
    ess_joint: float
    at_boundary: bool
    n_evaluations: int
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, object]:
        return {
            "theta": self.theta.to_dict(),
            "value": self.value,
            "ess_conditional": self.ess_conditional,
            "ess_joint": self.ess_joint,
            "at_boundary": self.at_boundary,
            "n_evaluations": self.n_evaluations,
            "warnings": list(self.warnings),
        }


def default_search_box(theta0: MCTheta, priors: Priors | None = None) -> list[tuple[float, float]]:
    """Two prior standard deviations either side of theta0 on the optimisation scale."""
    priors = priors or Priors()
    x0 = theta0.as_vector()
    spreads = [math.sqrt(priors.beta_var)] * theta0.beta.shape[0]
    spreads += [math.sqrt(priors.log_sigma_var), math.sqrt(priors.log_phi_var)]
    return [(x - 2.0 * sd, x + 2.0 * sd) for x, sd in zip(x0, spreads)]


def _free_mask(n_beta: int, fixed: Sequence[str]) -> np.ndarray:
    unknown = set(fixed) - set(PARAMETERS)
    if unknown:
        raise InvalidInputError(f"unknown fixed parameters {sorted(unknown)}; expected a subset of {PARAMETERS}")
    mask = np.ones(n_beta + 2, dtype=bool)
    if "beta" in fixed:
        mask[:n_beta] = False
    if "sigma" in fixed:
        mask[n_beta] = False
    if "phi" in fixed:
        mask[n_beta + 1] = False
    return mask


def mc_mle(
    plan: MCLikelihoodPlan,
    counts: np.ndarray,
    search_box: Sequence[tuple[float, float]] | None = None,
    fixed: Sequence[str] = (),
    priors: Priors | None = None,
) -> MCMLEResult:
    """Nelder-Mead maximisation of L over (beta, log sigma, log phi) inside a box around theta0."""
    x0 = plan.theta0.as_vector()
    box = list(search_box) if search_box is not None else default_search_box(plan.theta0, priors)
    if len(box) != x0.shape[0]:
        raise InvalidInputError(f"search box needs {x0.shape[0]} intervals, got {len(box)}")
    free = _free_mask(plan.theta0.beta.shape[0], fixed)
    if not free.any():
        value = mc_loglik(plan, counts, plan.theta0)
        return MCMLEResult(plan.theta0, 0.0, value.ess_conditional, value.ess_joint, False, 1, [])

    def unpack(z: np.ndarray) -> MCTheta:
        x = x0.copy()
        x[free] = z
        return MCTheta.from_vector(x)

    def objective(z: np.ndarray) -> float:
        try:
            value = mc_loglik(plan, counts, unpack(z)).value
        except (EmbeddingError, NumericalOverflowError):
            return math.inf
        return -value if math.isfinite(value) else math.inf

    bounds = [box[i] for i in np.flatnonzero(free)]
    result = optimize.minimize(
        objective,
        x0[free],
        method="Nelder-Mead",
        bounds=bounds,
        options={"xatol": 1e-6, "fatol": 1e-8, "maxiter": 2000 * int(free.sum())},
    )
    z = np.asarray(result.x) if result.fun <= 0.0 else x0[free]
    theta_hat = unpack(z)
    final = mc_loglik(plan, counts, theta_hat)
    warnings = list(plan.warnings) + list(final.warnings)
    at_boundary = False
    for value, (lo, hi) in zip(z, bounds):
        if min(value - lo, hi - value) <= 1e-6 * max(hi - lo, 1e-12):
            at_boundary = True
    if at_boundary:
        warnings.append("estimate lies on the search box boundary; re-anchor theta0 at the estimate")
    return MCMLEResult(
        theta=theta_hat,
        value=final.value,
        ess_conditional=final.ess_conditional,
        ess_joint=final.ess_joint,
        at_boundary=at_boundary,
        n_evaluations=int(result.nfev),
        warnings=warnings,
    )


def _model_at(model: UnitypeModel, theta: MCTheta) -> UnitypeModel:
    return UnitypeModel(
        grid=model.grid,
        cov=model.cov.with_params(theta.sigma**2, theta.phi),
        beta=theta.beta,
        covariates=model.covariates,
        offset=model.offset,
        covariate_names=model.covariate_names,
    )


def joint_draws(
    model: UnitypeModel, theta0: MCTheta, s: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Exact forward simulation of (cell counts, extended field) pairs at theta0."""
    grid = model.grid
    at = _model_at(model, theta0)
    gamma = rng.standard_normal((s,) + grid.extended_shape)
    fields = field_operator(at.cov, grid).apply(gamma) + at.cov.mean_offset
    log_mean = at.log_exposure + at.design @ at.beta + grid.restrict(fields)
    peak = float(log_mean[np.isfinite(log_mean)].max(initial=-np.inf))
    if peak > MAX_LOG_MEAN:
        raise NumericalOverflowError(f"joint simulation overflows at linear predictor {peak:.1f}", peak)
    counts = rng.poisson(np.exp(log_mean))
    return counts, fields


def conditional_draws(
    model: UnitypeModel,
    counts: np.ndarray,
    theta0: MCTheta,
    s: int,
    rng: np.random.Generator,
    burnin: int = 500,
    pilot: int = 500,
    max_thin: int = 64,
) -> tuple[np.ndarray, int]:
    """Draws of the extended field from [S | X; theta0] by a fixed-parameter MALA chain.

    A pilot run picks the thinning so the retained log-posterior trace has
    lag-1 autocorrelation below 0.1. Returns the fields and that thinning.
    """
    at = _model_at(model, theta0)
    target = UnitypeTarget(at, counts)
    log_theta = np.log([theta0.sigma, theta0.phi])
    pilot_config = SamplerConfig(
        burnin=burnin, n_iterations=pilot, thin=1, fix_theta=True, fix_beta=True, retain="gamma"
    )
    pilot_run = run_chain(target, pilot_config, ChainInit(log_theta=log_theta, beta=theta0.beta), rng)
    thin = choose_thin(pilot_run.logpost, max_thin)
    main_config = SamplerConfig(
        burnin=0,
        n_iterations=s * thin,
        thin=thin,
        fix_theta=True,
        fix_beta=True,
        retain="gamma",
        h0=float(pilot_run.h_trace[-1]),
    )
    start = ChainInit(log_theta=log_theta, beta=theta0.beta, gamma=pilot_run.gammas[-1])
    samples = run_chain(target, main_config, start, rng)
    operator = field_operator(at.cov, at.grid)
    return operator.apply(samples.gammas) + at.cov.mean_offset, thin


def build_plan(
    model: UnitypeModel,
    counts: np.ndarray,
    theta0: MCTheta,
    s: int,
    rng: np.random.Generator,
    max_thin: int = 64,
) -> MCLikelihoodPlan:
    if s < 1:
        raise InvalidInputError(f"number of simulations must be >= 1, got {s}")
    counts = np.asarray(counts, dtype=float)
    conditional, thin = conditional_draws(model, counts, theta0, s, rng, max_thin=max_thin)
    joint_counts, joint_fields = joint_draws(model, theta0, s, rng)
    warnings = []
    if thin >= max_thin:
        warnings.append(f"conditional chain needed the maximum thinning {max_thin}; draws may be correlated")
    return MCLikelihoodPlan(
        model=model,
        theta0=theta0,
        conditional_fields=conditional,
        joint_counts=joint_counts,
        joint_fields=joint_fields,
        thin=thin,
        warnings=warnings,
    )


def mc_mle_reanchored(
    model: UnitypeModel,
    counts: np.ndarray,
    theta0: MCTheta,
    s: int,
    rng: np.random.Generator,
    rounds: int = 1,
    fixed: Sequence[str] = (),
    priors: Priors | None = None,
    max_thin: int = 64,
) -> list[MCMLEResult]:
    """Fit, then repeat with theta0 moved to the previous estimate ``rounds`` times."""
    results = []
    anchor = theta0
    for _ in range(rounds + 1):
        plan = build_plan(model, counts, anchor, s, rng, max_thin=max_thin)
        result = mc_mle(plan, counts, fixed=fixed, priors=priors)
        results.append(result)
        anchor = result.theta
    return results
