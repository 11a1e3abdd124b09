"""Preconditioned MALA + random-walk Metropolis-Hastings over (Gamma, beta, log theta).

All three blocks are proposed jointly: Langevin moves for the whitened field
Gamma and the regression coefficients beta, a zero-drift random walk for the
log covariance parameters. A single global scale h is adapted towards the
MALA acceptance optimum. Aggregated-count targets interleave a multinomial
Gibbs step that re-imputes the latent cell counts.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Callable, NamedTuple, Sequence

import numpy as np
from scipy import linalg

from .errors import (
    ChainError,
    DegenerateRegionError,
    EmbeddingError,
    InsufficientSamplesError,
    InvalidInputError,
    NumericalError,
    NumericalOverflowError,
)
from .grid import GridSpec, RegionCells, RegionPartition

MALA_TARGET = 0.574
RANDOM_WALK_REFERENCE = 0.234
LANGEVIN_SCALE = 1.65
RANDOM_WALK_SCALE = 2.38

STREAMS = {"simulate": 1, "chain": 2, "augmentation": 3, "mcmle": 4}


def stream_rng(seed: int, stream: str, index: int = 0) -> np.random.Generator:
    """Independent generator for a named sub-stream of one run seed."""
    if stream not in STREAMS:
        raise InvalidInputError(f"unknown random stream {stream!r}")
    return np.random.default_rng([int(seed), STREAMS[stream], int(index)])


@dataclass(frozen=True)
class Priors:
    """Gaussian priors; the spreads are variances."""

    log_sigma_mean: float = 0.0
    log_sigma_var: float = 0.15
    log_phi_mean: float = math.log(10.0)
    log_phi_var: float = 0.15
    beta_mean: float = 0.0
    beta_var: float = 1e6

    def __post_init__(self) -> None:
        for name in ("log_sigma_var", "log_phi_var", "beta_var"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise InvalidInputError(f"prior {name} must be > 0, got {value}")

    def theta_mean(self, n_theta: int) -> np.ndarray:
        return np.tile([self.log_sigma_mean, self.log_phi_mean], n_theta // 2)

    def theta_var(self, n_theta: int) -> np.ndarray:
        return np.tile([self.log_sigma_var, self.log_phi_var], n_theta // 2)

    def log_density(self, beta: np.ndarray, log_theta: np.ndarray) -> float:
        n = log_theta.shape[0]
        value = -0.5 * float(np.sum((beta - self.beta_mean) ** 2)) / self.beta_var
        value -= 0.5 * float(np.sum((log_theta - self.theta_mean(n)) ** 2 / self.theta_var(n)))
        return value

    def grad_beta(self, beta: np.ndarray) -> np.ndarray:
        return -(beta - self.beta_mean) / self.beta_var


@dataclass(frozen=True)
class SamplerConfig:
    burnin: int = 1000
    n_iterations: int = 9000
    thin: int = 9
    target_accept: float = MALA_TARGET
    c: float = 0.4
    adapt_rate: float = 0.01
    h0: float = 1.0
    priors: Priors = field(default_factory=Priors)
    fix_theta: bool = False
    fix_beta: bool = False
    adapt_during_sampling: bool = True
    retain: str = "observed"

    def __post_init__(self) -> None:
        if self.burnin < 0 or self.n_iterations < 1 or self.thin < 1:
            raise InvalidInputError("burnin >= 0, iters >= 1 and thin >= 1 are required")
        if self.n_iterations % self.thin:
            raise InvalidInputError(f"thin={self.thin} does not divide iters={self.n_iterations}")
        if not 0 < self.target_accept < 1:
            raise InvalidInputError(f"target_accept must lie in (0, 1), got {self.target_accept}")
        if not (self.c > 0 and self.h0 > 0 and self.adapt_rate >= 0):
            raise InvalidInputError("c and h0 must be > 0 and adapt_rate >= 0")
        if self.retain not in ("observed", "gamma"):
            raise InvalidInputError(f"retain must be 'observed' or 'gamma', got {self.retain!r}")

    @property
    def n_retained(self) -> int:
        return self.n_iterations // self.thin


class Scalings(NamedTuple):
    gamma: float
    beta: float
    theta: float


def scalings(dim_gamma: int, dim_beta: int, dim_theta: int) -> Scalings:
    """Squared per-block scalings 1.65^2/dim^(1/3) (Langevin) and 2.38^2/dim (random walk)."""

    def langevin(dim: int) -> float:
        return LANGEVIN_SCALE**2 / dim ** (1.0 / 3.0) if dim else 0.0

    return Scalings(
        gamma=langevin(dim_gamma),
        beta=langevin(dim_beta),
        theta=RANDOM_WALK_SCALE**2 / dim_theta if dim_theta else 0.0,
    )


@dataclass(frozen=True, eq=False)
class Geometry:
    """Block preconditioners and scalings, fixed for the life of a chain."""

    h2: Scalings
    xi_beta: np.ndarray
    xi_beta_chol: np.ndarray
    xi_beta_inv: np.ndarray
    xi_theta: np.ndarray

    @classmethod
    def for_target(cls, target: Any, config: SamplerConfig) -> "Geometry":
        n_beta = target.n_beta
        xi_beta = np.asarray(target.beta_preconditioner(), dtype=float).reshape(n_beta, n_beta)
        h2 = scalings(int(np.prod(target.gamma_shape)), n_beta, target.n_theta)
        if config.fix_beta:
            h2 = h2._replace(beta=0.0)
        if n_beta and not config.fix_beta:
            xi_beta = 0.5 * (xi_beta + xi_beta.T)
            jitter = 1e-12 * max(1.0, float(np.trace(xi_beta)))
            chol = linalg.cholesky(xi_beta + jitter * np.eye(n_beta), lower=True)
            inverse = linalg.cho_solve((chol, True), np.eye(n_beta))
        else:
            chol = inverse = np.zeros((n_beta, n_beta))
        return cls(
            h2=h2,
            xi_beta=xi_beta,
            xi_beta_chol=chol,
            xi_beta_inv=inverse,
            xi_theta=config.priors.theta_var(target.n_theta),
        )


class PosteriorPoint(NamedTuple):
    logpost: float
    loglik: float
    grad_gamma: np.ndarray
    grad_beta: np.ndarray
    cell_means: np.ndarray


def evaluate_posterior(
    target: Any,
    priors: Priors,
    gamma: np.ndarray,
    beta: np.ndarray,
    log_theta: np.ndarray,
    counts: np.ndarray | None = None,
) -> PosteriorPoint:
    """Log-posterior and its gradients wrt Gamma and beta."""
    ev = target.evaluate(gamma, beta, log_theta, counts)
    logpost = ev.loglik - 0.5 * float(np.sum(gamma * gamma)) + priors.log_density(beta, log_theta)
    return PosteriorPoint(
        logpost=logpost,
        loglik=ev.loglik,
        grad_gamma=ev.grad_gamma - gamma,
        grad_beta=ev.grad_beta + priors.grad_beta(beta),
        cell_means=ev.cell_means,
    )


@dataclass(frozen=True, eq=False)
class SamplerState:
    gamma: np.ndarray
    beta: np.ndarray
    log_theta: np.ndarray
    h: float
    point: PosteriorPoint
    counts: np.ndarray | None = None
    iteration: int = 0
    n_accepted: int = 0

    @property
    def logpost(self) -> float:
        return self.point.logpost

    @property
    def acceptance(self) -> float:
        return self.n_accepted / self.iteration if self.iteration else 0.0


@dataclass(frozen=True, eq=False)
class Proposal:
    gamma: np.ndarray
    beta: np.ndarray
    log_theta: np.ndarray
    point: PosteriorPoint | None
    reason: str = ""

    @property
    def feasible(self) -> bool:
        return self.point is not None


def _langevin_means(
    gamma: np.ndarray, beta: np.ndarray, point: PosteriorPoint, h: float, geometry: Geometry
) -> tuple[np.ndarray, np.ndarray]:
    step_gamma = 0.5 * h * h * geometry.h2.gamma
    step_beta = 0.5 * h * h * geometry.h2.beta
    return gamma + step_gamma * point.grad_gamma, beta + step_beta * (geometry.xi_beta @ point.grad_beta)


def _log_q(
    to_gamma: np.ndarray,
    to_beta: np.ndarray,
    mean_gamma: np.ndarray,
    mean_beta: np.ndarray,
    h: float,
    geometry: Geometry,
) -> float:
    """Langevin proposal log-density up to a constant shared by both directions."""
    value = -0.5 * float(np.sum((to_gamma - mean_gamma) ** 2)) / (h * h * geometry.h2.gamma)
    if to_beta.size and geometry.h2.beta > 0:
        diff = to_beta - mean_beta
        value -= 0.5 * float(diff @ geometry.xi_beta_inv @ diff) / (h * h * geometry.h2.beta)
    return value


def mala_rw_propose(
    state: SamplerState,
    target: Any,
    config: SamplerConfig,
    rng: np.random.Generator,
    geometry: Geometry | None = None,
) -> Proposal:
    geometry = geometry or Geometry.for_target(target, config)
    h = state.h
    mean_gamma, mean_beta = _langevin_means(state.gamma, state.beta, state.point, h, geometry)
    gamma = mean_gamma + h * math.sqrt(geometry.h2.gamma) * rng.standard_normal(state.gamma.shape)
    beta = mean_beta + h * math.sqrt(geometry.h2.beta) * (geometry.xi_beta_chol @ rng.standard_normal(state.beta.shape))
    if config.fix_theta:
        log_theta = state.log_theta.copy()
    else:
        spread = math.sqrt(config.c * geometry.h2.theta) * h * np.sqrt(geometry.xi_theta)
        log_theta = state.log_theta + spread * rng.standard_normal(state.log_theta.shape)

    try:
        point = evaluate_posterior(target, config.priors, gamma, beta, log_theta, state.counts)
    except EmbeddingError:
        return Proposal(gamma, beta, log_theta, None, reason="embedding")
    except NumericalOverflowError:
        return Proposal(gamma, beta, log_theta, None, reason="overflow")
    finite = (
        math.isfinite(point.logpost)
        and np.isfinite(point.grad_gamma).all()
        and np.isfinite(point.grad_beta).all()
    )
    if not finite:
        return Proposal(gamma, beta, log_theta, None, reason="non-finite")
    return Proposal(gamma, beta, log_theta, point)


def mh_accept(
    state: SamplerState,
    proposal: Proposal,
    rng: np.random.Generator,
    geometry: Geometry,
) -> tuple[SamplerState, bool, float]:
    """Metropolis-Hastings step; returns the next state, the accept flag and alpha."""
    u = rng.random()
    if not proposal.feasible:
        return replace(state, iteration=state.iteration + 1), False, 0.0
    h = state.h
    fwd_gamma, fwd_beta = _langevin_means(state.gamma, state.beta, state.point, h, geometry)
    rev_gamma, rev_beta = _langevin_means(proposal.gamma, proposal.beta, proposal.point, h, geometry)
    log_q_forward = _log_q(proposal.gamma, proposal.beta, fwd_gamma, fwd_beta, h, geometry)
    log_q_reverse = _log_q(state.gamma, state.beta, rev_gamma, rev_beta, h, geometry)
    log_ratio = proposal.point.logpost - state.logpost + log_q_reverse - log_q_forward
    alpha = 1.0 if log_ratio >= 0 else math.exp(log_ratio)
    if u < alpha:
        accepted = replace(
            state,
            gamma=proposal.gamma,
            beta=proposal.beta,
            log_theta=proposal.log_theta,
            point=proposal.point,
            iteration=state.iteration + 1,
            n_accepted=state.n_accepted + 1,
        )
        return accepted, True, alpha
    return replace(state, iteration=state.iteration + 1), False, alpha


def adapt_h(h: float, alpha: float, iteration: int, config: SamplerConfig) -> float:
    """Robbins-Monro step on log h with gain adapt_rate * i^(-1/2)."""
    gain = config.adapt_rate / math.sqrt(max(iteration, 1))
    return h * math.exp(gain * (alpha - config.target_accept))


def gibbs_multinomial_step(
    partition: RegionPartition,
    cell_means: np.ndarray,
    rng: np.random.Generator,
    cells: RegionCells | None = None,
) -> np.ndarray:
    """Distribute each region total over its cells in proportion to the cell means."""
    cell_means = np.asarray(cell_means, dtype=float)
    if cells is None:
        grid_shape = partition.region_of_cell.shape
        if cell_means.shape != grid_shape:
            raise InvalidInputError("cell means and region map differ in shape")
        flat_regions = partition.region_of_cell.reshape(-1)
        by_region = {i: np.flatnonzero(flat_regions == i) for i in partition.region_ids}
    else:
        by_region = cells.by_region
    means = cell_means.reshape(-1)
    out = np.zeros(means.shape, dtype=np.int64)
    for region_id, idx in by_region.items():
        total = partition.region_totals.get(region_id, 0)
        if total == 0 or idx.size == 0:
            continue
        mu = means[idx]
        mass = float(mu.sum())
        if not (math.isfinite(mass) and mass > 0) or np.any(mu < 0):
            raise DegenerateRegionError(
                f"region {region_id} has total {total} but its cells carry no intensity", region_id=region_id
            )
        out[idx] = rng.multinomial(total, mu / mass)
    return out.reshape(cell_means.shape)


@dataclass(frozen=True, eq=False)
class ChainInit:
    log_theta: np.ndarray | None = None
    beta: np.ndarray | None = None
    gamma: np.ndarray | None = None


@dataclass(eq=False)
class PosteriorSamples:
    """Thinned draws plus the traces of the chain that produced them."""

    fields: np.ndarray | None
    beta: np.ndarray
    sigma: np.ndarray
    phi: np.ndarray
    logpost: np.ndarray
    iterations: np.ndarray
    kind: str = "unitype"
    beta_names: tuple[str, ...] = ()
    grid: GridSpec | None = None
    design: np.ndarray | None = None
    log_exposure: np.ndarray | None = None
    gammas: np.ndarray | None = None
    accepted: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    h_trace: np.ndarray = field(default_factory=lambda: np.zeros(0))
    logpost_trace: np.ndarray = field(default_factory=lambda: np.zeros(0))
    audit_checks: int = 0
    warnings: list[str] = field(default_factory=list)

    @property
    def n_draws(self) -> int:
        return int(self.logpost.shape[0])

    @property
    def acceptance_rate(self) -> float:
        return float(self.accepted.mean()) if self.accepted.size else 0.0

    def trailing_acceptance(self, fraction: float = 0.2) -> float:
        if not self.accepted.size:
            return 0.0
        tail = max(1, int(round(fraction * self.accepted.size)))
        return float(self.accepted[-tail:].mean())

    @classmethod
    def merge(cls, chains: Sequence["PosteriorSamples"]) -> "PosteriorSamples":
        if not chains:
            raise InsufficientSamplesError("no chains to merge")
        first = chains[0]

        def cat(name: str) -> np.ndarray | None:
            parts = [getattr(c, name) for c in chains]
            return None if any(p is None for p in parts) else np.concatenate(parts)

        return cls(
            fields=cat("fields"),
            beta=cat("beta"),
            sigma=cat("sigma"),
            phi=cat("phi"),
            logpost=cat("logpost"),
            iterations=cat("iterations"),
            kind=first.kind,
            beta_names=first.beta_names,
            grid=first.grid,
            design=first.design,
            log_exposure=first.log_exposure,
            gammas=cat("gammas"),
            accepted=cat("accepted"),
            h_trace=cat("h_trace"),
            logpost_trace=cat("logpost_trace"),
            audit_checks=sum(c.audit_checks for c in chains),
            warnings=[w for c in chains for w in c.warnings],
        )


def initial_state(
    target: Any, config: SamplerConfig, init: ChainInit | None, aug_rng: np.random.Generator
) -> SamplerState:
    init = init or ChainInit()
    n_theta = target.n_theta
    gamma = np.zeros(target.gamma_shape) if init.gamma is None else np.array(init.gamma, dtype=float)
    beta = target.initial_beta() if init.beta is None else np.array(init.beta, dtype=float).reshape(-1)
    if init.log_theta is None:
        log_theta = config.priors.theta_mean(n_theta)
    else:
        log_theta = np.asarray(init.log_theta, dtype=float).reshape(-1)
        if log_theta.shape[0] == 2 and n_theta > 2:
            log_theta = np.tile(log_theta, n_theta // 2)
    if gamma.shape != tuple(target.gamma_shape) or beta.shape[0] != target.n_beta or log_theta.shape[0] != n_theta:
        raise InvalidInputError("initial state does not match the target dimensions")
    counts = None
    try:
        if target.augmented:
            counts = target.augment(target.cell_means(gamma, beta, log_theta), aug_rng)
        point = evaluate_posterior(target, config.priors, gamma, beta, log_theta, counts)
    except NumericalError as exc:
        raise ChainError(f"initial state is not evaluable: {exc}", iteration=0) from exc
    if not math.isfinite(point.logpost):
        raise ChainError("initial state has zero posterior density", iteration=0)
    return SamplerState(gamma=gamma, beta=beta, log_theta=log_theta, h=config.h0, point=point, counts=counts)


def run_chain(
    target: Any,
    config: SamplerConfig,
    init: ChainInit | None,
    rng: np.random.Generator,
    aug_rng: np.random.Generator | None = None,
    on_progress: Callable[[int, SamplerState], None] | None = None,
) -> PosteriorSamples:
    """Burn-in, then sampling with thinning; identical generators give identical draws."""
    aug_rng = aug_rng or rng
    geometry = Geometry.for_target(target, config)
    state = initial_state(target, config, init, aug_rng)
    total = config.burnin + config.n_iterations
    n_keep = config.n_retained

    keep_fields: list[np.ndarray] = []
    keep_gamma: list[np.ndarray] = []
    keep_beta = np.zeros((n_keep, target.n_beta))
    keep_theta = np.zeros((n_keep, target.n_theta))
    keep_logpost = np.zeros(n_keep)
    keep_iter = np.zeros(n_keep, dtype=np.int64)
    accepted_trace = np.zeros(total, dtype=bool)
    h_trace = np.zeros(total)
    logpost_trace = np.zeros(total)
    reasons: dict[str, int] = {}

    slot = 0
    for i in range(1, total + 1):
        try:
            if target.augmented:
                counts = target.augment(state.point.cell_means, aug_rng)
                point = evaluate_posterior(target, config.priors, state.gamma, state.beta, state.log_theta, counts)
                state = replace(state, counts=counts, point=point)
            proposal = mala_rw_propose(state, target, config, rng, geometry)
        except NumericalError as exc:
            raise ChainError(f"iteration {i}: {exc}", iteration=i) from exc
        if proposal.reason:
            reasons[proposal.reason] = reasons.get(proposal.reason, 0) + 1
        state, accepted, alpha = mh_accept(state, proposal, rng, geometry)
        if i <= config.burnin or config.adapt_during_sampling:
            state = replace(state, h=adapt_h(state.h, alpha, i, config))
        accepted_trace[i - 1] = accepted
        h_trace[i - 1] = state.h
        logpost_trace[i - 1] = state.logpost

        if i > config.burnin and (i - config.burnin) % config.thin == 0:
            if config.retain == "gamma":
                keep_gamma.append(state.gamma.copy())
            keep_fields.append(target.observed_field(state.gamma, state.log_theta))
            keep_beta[slot] = state.beta
            keep_theta[slot] = state.log_theta
            keep_logpost[slot] = state.logpost
            keep_iter[slot] = i
            slot += 1
        if on_progress is not None:
            on_progress(i, state)

    warnings = [f"{count} proposals rejected as infeasible ({reason})" for reason, count in sorted(reasons.items())]
    return PosteriorSamples(
        fields=np.stack(keep_fields),
        beta=keep_beta,
        sigma=np.exp(keep_theta[:, 0::2]),
        phi=np.exp(keep_theta[:, 1::2]),
        logpost=keep_logpost,
        iterations=keep_iter,
        kind=target.kind,
        beta_names=tuple(target.beta_names),
        grid=target.grid,
        design=target.design,
        log_exposure=target.log_exposure,
        gammas=np.stack(keep_gamma) if keep_gamma else None,
        accepted=accepted_trace,
        h_trace=h_trace,
        logpost_trace=logpost_trace,
        audit_checks=getattr(target, "audit_checks", 0),
        warnings=warnings,
    )


def run_chains(
    target_factory: Callable[[], Any],
    config: SamplerConfig,
    init: ChainInit | None,
    seed: int,
    n_chains: int,
    max_workers: int | None = None,
) -> list[PosteriorSamples]:
    """Independent chains on separate sub-streams, returned in chain order."""
    if n_chains < 1:
        raise InvalidInputError(f"need at least one chain, got {n_chains}")

    def one(index: int) -> PosteriorSamples:
        return run_chain(
            target_factory(),
            config,
            init,
            stream_rng(seed, "chain", index),
            stream_rng(seed, "augmentation", index),
        )

    if n_chains == 1:
        return [one(0)]
    with ThreadPoolExecutor(max_workers=max_workers or n_chains) as pool:
        return list(pool.map(one, range(n_chains)))


def autocorrelation(trace: np.ndarray, max_lag: int = 20) -> np.ndarray | None:
    """Lag 1..max_lag sample autocorrelations; None for a constant trace."""
    x = np.asarray(trace, dtype=float)
    x = x - x.mean()
    denom = float(np.dot(x, x))
    if denom <= 1e-300 * max(1, x.size):
        return None
    lags = min(max_lag, x.size - 1)
    return np.array([float(np.dot(x[:-k], x[k:])) / denom for k in range(1, lags + 1)])


def choose_thin(trace: np.ndarray, max_thin: int = 64) -> int:
    """Smallest thinning factor whose thinned trace has lag-1 autocorrelation below 0.1."""
    trace = np.asarray(trace, dtype=float)
    for thin in range(1, max_thin + 1):
        thinned = trace[::thin]
        if thinned.size < 3:
            return thin
        acf = autocorrelation(thinned, 1)
        if acf is None or acf[0] < 0.1:
            return thin
    return max_thin


def trace_diagnostics(
    traces: dict[str, np.ndarray],
    acceptance: float | None = None,
    trailing_acceptance: float | None = None,
    max_lag: int = 20,
) -> dict[str, Any]:
    lengths = {int(np.asarray(v).shape[0]) for v in traces.values()}
    if not lengths or min(lengths) < 10:
        raise InsufficientSamplesError("diagnostics need at least 10 retained samples")
    report: dict[str, Any] = {
        "n_draws": min(lengths),
        "acceptance": acceptance,
        "trailing_acceptance": trailing_acceptance,
        "target_accept": MALA_TARGET,
        "random_walk_reference": RANDOM_WALK_REFERENCE,
        "parameters": {},
        "warnings": [],
    }
    for name, values in traces.items():
        acf = autocorrelation(np.asarray(values, dtype=float), max_lag)
        if acf is None:
            entry = {"acf": None, "lag1": None, "degenerate": True, "poor_mixing": False}
            report["warnings"].append(f"{name}: constant trace")
        else:
            lag1 = float(acf[0])
            entry = {"acf": acf.tolist(), "lag1": lag1, "degenerate": False, "poor_mixing": lag1 > 0.5}
            if lag1 > 0.5:
                report["warnings"].append(f"{name}: lag-1 autocorrelation {lag1:.2f} > 0.5")
        report["parameters"][name] = entry
    return report


def diagnostics(samples: PosteriorSamples, max_lag: int = 20) -> dict[str, Any]:
    traces: dict[str, np.ndarray] = {"logpost": samples.logpost}
    for j, name in enumerate(samples.beta_names):
        traces[f"beta_{name}"] = samples.beta[:, j]
    pairs = samples.sigma.shape[1]
    for k in range(pairs):
        suffix = "" if pairs == 1 else f"_{k + 1}"
        traces[f"sigma{suffix}"] = samples.sigma[:, k]
        traces[f"phi{suffix}"] = samples.phi[:, k]
    report = trace_diagnostics(
        traces,
        acceptance=samples.acceptance_rate,
        trailing_acceptance=samples.trailing_acceptance(),
        max_lag=max_lag,
    )
    report["warnings"] = list(samples.warnings) + report["warnings"]
    report["audit_checks"] = samples.audit_checks
    return report
