"""Edge-corrected K-function estimation, moment fitting, kernel intensity and the temporal baseline fit."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy import integrate, optimize, spatial

from .covariance import CovarianceModel, correlation
from .errors import InsufficientDataError, InvalidInputError, OptimizationError
from .grid import GridSpec, PointPattern, Window

WEIGHTS = ("uniform", "inverse")


@dataclass(frozen=True, eq=False)
class KEstimate:
    u: np.ndarray
    k_hat: np.ndarray
    n: int
    area: float
    window: Window

    @property
    def u_max(self) -> float:
        return float(self.u[-1])

    @property
    def intensity(self) -> float:
        return self.n / self.area


def translation_weights(window: Window, dx: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """|A intersect (A + d)| / |A| for displacement d in a rectangle."""
    return (window.width - np.abs(dx)) * (window.height - np.abs(dy)) / window.area


def estimate_K(pattern: PointPattern, u_max: float | None = None, n_bins: int = 100) -> KEstimate:
    """Translation-corrected Ripley estimate on ``n_bins`` distances from 0 to u_max."""
    window = pattern.window
    n = len(pattern)
    if n < 2:
        raise InsufficientDataError(f"K-function estimation needs n >= 2 points, got {n}")
    if u_max is None:
        u_max = window.shorter_side / 4.0
    if not 0 < u_max <= window.shorter_side / 2.0:
        raise InvalidInputError(
            f"u_max={u_max} must lie in (0, {window.shorter_side / 2.0}] (half the shorter window side)"
        )
    if n_bins < 2:
        raise InvalidInputError(f"n_bins must be >= 2, got {n_bins}")

    u = np.linspace(0.0, float(u_max), int(n_bins))
    tree = spatial.cKDTree(pattern.points)
    pairs = tree.query_pairs(r=float(u_max), output_type="ndarray")
    if pairs.size:
        delta = pattern.points[pairs[:, 0]] - pattern.points[pairs[:, 1]]
        dist = np.hypot(delta[:, 0], delta[:, 1])
        contribution = 2.0 / translation_weights(window, delta[:, 0], delta[:, 1])
        order = np.argsort(dist, kind="stable")
        cumulative = np.concatenate([[0.0], np.cumsum(contribution[order])])
        counted = np.searchsorted(dist[order], u, side="right")
        k_hat = window.area / n**2 * cumulative[counted]
    else:
        k_hat = np.zeros_like(u)
    return KEstimate(u=u, k_hat=k_hat, n=n, area=window.area, window=window)


def model_K_on_grid(cov: CovarianceModel, u: np.ndarray, refine: int = 4096) -> np.ndarray:
    """K(u) on an increasing grid by cumulative trapezoid integration on a refined lattice."""
    u = np.asarray(u, dtype=float)
    base = np.pi * u**2
    if cov.sigma2 == 0 or u.size == 0 or u.max() == 0:
        return base
    v = np.union1d(u, np.linspace(0.0, float(u.max()), refine + 1))
    integrand = np.expm1(cov.sigma2 * correlation(cov, v)) * v
    cumulative = integrate.cumulative_trapezoid(integrand, v, initial=0.0)
    return base + 2.0 * np.pi * cumulative[np.searchsorted(v, u)]


def _weights(weight: str | Callable[[np.ndarray], np.ndarray] | np.ndarray, u: np.ndarray) -> np.ndarray:
    if callable(weight):
        return np.asarray(weight(u), dtype=float)
    if isinstance(weight, str):
        if weight == "uniform":
            return np.ones_like(u)
        if weight == "inverse":
            safe = np.where(u > 0, u, u[1] if u.size > 1 else 1.0)
            return 1.0 / safe
        raise InvalidInputError(f"unknown weight {weight!r}; expected one of {WEIGHTS}")
    weight = np.asarray(weight, dtype=float)
    if weight.shape != u.shape:
        raise InvalidInputError("weight array must match the distance grid")
    return weight


def moment_discrepancy(
    k_estimate: KEstimate,
    cov: CovarianceModel,
    beta: float | None = None,
    u0: float | None = None,
    c: float = 0.25,
    w: str | Callable[[np.ndarray], np.ndarray] | np.ndarray = "uniform",
) -> float:
    """D(theta) = int_0^u0 w(u) {K_hat(u)^c - K(u; theta)^c}^2 du by trapezoid."""
    u0 = k_estimate.u_max if u0 is None else float(u0)
    if u0 > k_estimate.u_max * (1 + 1e-12):
        raise InvalidInputError(f"u0={u0} exceeds the estimate's u_max={k_estimate.u_max}")
    if not c > 0:
        raise InvalidInputError(f"c must be > 0, got {c}")
    weights = _weights(w, k_estimate.u)
    keep = k_estimate.u <= u0 * (1 + 1e-12)
    u = k_estimate.u[keep]
    k_model = model_K_on_grid(cov, u)
    residual = (np.power(k_estimate.k_hat[keep], c) - np.power(k_model, c)) ** 2
    return float(integrate.trapezoid(weights[keep] * residual, u))


class MomentFit(NamedTuple):
    sigma: float
    phi: float
    discrepancy: float
    starts: list[dict[str, float]]

    def covariance(self, family: str = "exponential", kappa: float = 0.5) -> CovarianceModel:
        return CovarianceModel(family=family, sigma2=self.sigma**2, phi=self.phi, kappa=kappa)


def fit_moments(
    k_estimate: KEstimate,
    family: str = "exponential",
    u0: float | None = None,
    c: float = 0.25,
    kappa: float = 0.5,
    weight: str | Callable[[np.ndarray], np.ndarray] | np.ndarray = "uniform",
) -> MomentFit:
    """Minimise D over (log sigma, log phi) by Nelder-Mead from a 5x5 log-grid of starts."""
    u0 = min(k_estimate.u_max, k_estimate.window.shorter_side / 4.0) if u0 is None else float(u0)
    template = CovarianceModel(family=family, kappa=kappa)

    def objective(x: np.ndarray) -> float:
        sigma, phi = math.exp(x[0]), math.exp(x[1])
        value = moment_discrepancy(k_estimate, template.with_params(sigma * sigma, phi), u0=u0, c=c, w=weight)
        return value if math.isfinite(value) else math.inf

    bounds = [(math.log(0.01), math.log(5.0)), (math.log(u0 / 100.0), math.log(10.0 * u0))]
    best_x: np.ndarray | None = None
    best_value = math.inf
    starts: list[dict[str, float]] = []
    any_improved = False
    for sigma0 in np.geomspace(0.05, 3.0, 5):
        for phi0 in np.geomspace(u0 / 25.0, 4.0 * u0, 5):
            x0 = np.log([sigma0, phi0])
            seed_value = objective(x0)
            result = optimize.minimize(
                objective,
                x0,
                method="Nelder-Mead",
                bounds=bounds,
                options={"xatol": 1e-9, "fatol": 1e-16, "maxiter": 4000},
            )
            value, x = float(result.fun), np.asarray(result.x)
            if not value <= seed_value:
                value, x = seed_value, x0
            any_improved = any_improved or value < seed_value or seed_value == 0
            starts.append(
                {"sigma0": float(sigma0), "phi0": float(phi0), "seed_value": seed_value, "value": value}
            )
            if value < best_value:
                best_value, best_x = value, x
    if best_x is None or not any_improved:
        raise OptimizationError("no multistart improved the moment discrepancy", diagnostics={"starts": starts})
    return MomentFit(
        sigma=float(math.exp(best_x[0])), phi=float(math.exp(best_x[1])), discrepancy=best_value, starts=starts
    )


def _disc_area_in_window(cx: np.ndarray, cy: np.ndarray, h: float, window: Window, nodes: int = 64) -> np.ndarray:
    """Area of the disc of radius h around each centre that lies inside the window."""
    t_nodes, t_weights = np.polynomial.legendre.leggauss(nodes)
    lo = np.maximum(-h, window.xmin - cx)
    hi = np.minimum(h, window.xmax - cx)
    span = np.maximum(hi - lo, 0.0)
    t = 0.5 * (hi + lo)[:, None] + 0.5 * span[:, None] * t_nodes[None, :]
    half = np.sqrt(np.maximum(h * h - t * t, 0.0))
    top = np.minimum(half, window.ymax - cy[:, None])
    bottom = np.maximum(-half, window.ymin - cy[:, None])
    chord = np.maximum(top - bottom, 0.0)
    return 0.5 * span * (chord @ t_weights)


def kernel_intensity(pattern: PointPattern, grid: GridSpec, bandwidth: float) -> np.ndarray:
    """Edge-corrected uniform-kernel intensity at cell centroids, shape ``(ny, nx)``."""
    if not bandwidth > 0:
        raise InvalidInputError(f"bandwidth must be > 0, got {bandwidth}")
    if pattern.window != grid.window:
        raise InvalidInputError("pattern window differs from grid window")
    xs, ys = grid.centroids()
    cx, cy = np.meshgrid(xs, ys)
    centres = np.column_stack([cx.ravel(), cy.ravel()])
    if len(pattern):
        counts = spatial.cKDTree(pattern.points).query_ball_point(centres, r=bandwidth, return_length=True)
    else:
        counts = np.zeros(centres.shape[0])
    area = _disc_area_in_window(centres[:, 0], centres[:, 1], float(bandwidth), grid.window)
    return (np.asarray(counts, dtype=float) / area).reshape(grid.shape)


class TemporalBaselineFit(NamedTuple):
    names: tuple[str, ...]
    coefficients: np.ndarray
    fitted: np.ndarray
    baseline: np.ndarray

    def to_dict(self) -> dict[str, float]:
        return {name: float(value) for name, value in zip(self.names, self.coefficients)}


def temporal_design(
    n_steps: int, period: float = 0.0, weekly: bool = False, trend: bool = True, harmonics: int = 1
) -> tuple[np.ndarray, tuple[str, ...]]:
    """Columns: intercept, trend ``t/T - 1/2``, cos/sin pairs of period ``period``, weekday dummies (t mod 7)."""
    t = np.arange(n_steps, dtype=float)
    columns, names = [np.ones(n_steps)], ["intercept"]
    if trend and n_steps > 1:
        columns.append(t / n_steps - 0.5)
        names.append("trend")
    if period > 0:
        for h in range(1, harmonics + 1):
            angle = 2.0 * math.pi * h * t / period
            columns += [np.cos(angle), np.sin(angle)]
            names += [f"cos_{h}", f"sin_{h}"]
    if weekly:
        weekday = np.arange(n_steps) % 7
        for d in range(1, 7):
            columns.append((weekday == d).astype(float))
            names.append(f"weekday_{d}")
    return np.column_stack(columns), tuple(names)


def fit_temporal_baseline(
    step_counts: np.ndarray,
    period: float = 0.0,
    weekly: bool = False,
    trend: bool = True,
    harmonics: int = 1,
) -> TemporalBaselineFit:
    """Log-linear Poisson regression of per-step totals on trend, seasonal and weekday terms.

    ``baseline`` is the fitted mean rescaled to average one over the steps, so a
    spatial baseline built as events per step carries the overall level.
    """
    y = np.asarray(step_counts, dtype=float)
    if y.ndim != 1 or y.size == 0:
        raise InvalidInputError("step counts must be a non-empty 1-D array")
    if np.any(y < 0) or not np.all(np.isfinite(y)):
        raise InvalidInputError("step counts must be finite and nonnegative")
    if period < 0 or harmonics < 1:
        raise InvalidInputError(f"period must be >= 0 and harmonics >= 1, got {period}, {harmonics}")
    if y.sum() == 0:
        raise InsufficientDataError("no events to fit a temporal baseline")
    design, names = temporal_design(y.size, period, weekly, trend, harmonics)
    if np.linalg.matrix_rank(design) < design.shape[1]:
        raise InsufficientDataError(
            f"{y.size} steps cannot identify the temporal terms {', '.join(names)}"
        )

    def rate(b: np.ndarray) -> np.ndarray:
        return np.exp(np.minimum(design @ b, 700.0))

    def objective(b: np.ndarray) -> float:
        return float(np.sum(rate(b) - y * (design @ b)))

    def gradient(b: np.ndarray) -> np.ndarray:
        return design.T @ (rate(b) - y)

    def hessian(b: np.ndarray) -> np.ndarray:
        return design.T @ (rate(b)[:, None] * design)

    x0 = np.zeros(design.shape[1])
    x0[0] = math.log(y.mean())
    result = optimize.minimize(objective, x0, jac=gradient, hess=hessian, method="trust-exact", options={"gtol": 1e-8})
    b = np.asarray(result.x)
    score = float(np.max(np.abs(gradient(b)))) if np.all(np.isfinite(b)) else math.inf
    if not score <= 1e-5 * max(1.0, y.sum()):
        raise OptimizationError(
            f"temporal baseline fit did not converge: {result.message}",
            diagnostics={"max_score": score, "iterations": int(result.nit)},
        )
    fitted = rate(b)
    return TemporalBaselineFit(names=names, coefficients=b, fitted=fitted, baseline=fitted / fitted.mean())
