"""Stationary correlation families and their block-circulant embedding."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np
from scipy import fft, special

from .errors import EmbeddingError, InvalidInputError
from .grid import GridSpec

FAMILIES = ("exponential", "matern")
PRESET_KAPPAS = (0.5, 1.5, 2.5)
CLAMP_TOLERANCE = 1e-8
IMAG_TOLERANCE = 1e-8


@dataclass(frozen=True)
class CovarianceModel:
    """C(u) = sigma2 * r(u; phi, kappa).

    ``sigma2 = 0`` is accepted as the Poisson limit (no latent field).
    """

    family: str = "exponential"
    sigma2: float = 1.0
    phi: float = 1.0
    kappa: float = 0.5

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise InvalidInputError(f"unknown covariance family {self.family!r}; expected one of {FAMILIES}")
        if not (math.isfinite(self.sigma2) and self.sigma2 >= 0):
            raise InvalidInputError(f"sigma2 must be finite and >= 0, got {self.sigma2}")
        if not (math.isfinite(self.phi) and self.phi > 0):
            raise InvalidInputError(f"phi must be > 0, got {self.phi}")
        if not (math.isfinite(self.kappa) and self.kappa > 0):
            raise InvalidInputError(f"kappa must be > 0, got {self.kappa}")

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    @property
    def mean_offset(self) -> float:
        return -0.5 * self.sigma2

    def with_params(self, sigma2: float, phi: float) -> "CovarianceModel":
        return replace(self, sigma2=float(sigma2), phi=float(phi))

    def correlation(self, u: np.ndarray | float) -> np.ndarray:
        return correlation(self, u)

    def covariance(self, u: np.ndarray | float) -> np.ndarray:
        return self.sigma2 * correlation(self, u)


def _half_integer_matern(t: np.ndarray, kappa: float) -> np.ndarray:
    # K_{1/2}(t) = sqrt(pi / 2t) e^{-t}; K_{v+1} = K_{v-1} + (2v / t) K_v
    n = int(round(kappa - 0.5))
    scaled_prev = np.ones_like(t)  # e^t sqrt(2t/pi) K_{-1/2}
    scaled = np.ones_like(t)  # e^t sqrt(2t/pi) K_{1/2}
    nu = 0.5
    for _ in range(n):
        scaled_prev, scaled = scaled, scaled_prev + (2.0 * nu / t) * scaled
        nu += 1.0
    log_k = np.log(scaled) - t + 0.5 * np.log(np.pi / (2.0 * t))
    log_r = kappa * np.log(t) + log_k - (kappa - 1.0) * math.log(2.0) - special.gammaln(kappa)
    return np.exp(log_r)


def _general_matern(t: np.ndarray, kappa: float) -> np.ndarray:
    log_r = (
        kappa * np.log(t)
        + np.log(special.kve(kappa, t))
        - t
        - (kappa - 1.0) * math.log(2.0)
        - special.gammaln(kappa)
    )
    return np.exp(log_r)


def correlation(model: CovarianceModel, u: np.ndarray | float) -> np.ndarray:
    """r(u; phi, kappa), with r(0) = 1 handled exactly."""
    u = np.asarray(u, dtype=float)
    if np.any(u < 0) or not np.all(np.isfinite(u)):
        raise InvalidInputError("correlation needs finite distances u >= 0")
    t = u / model.phi
    if model.family == "exponential":
        return np.exp(-t)

    out = np.ones_like(t)
    positive = t > 1e-12
    if not positive.any():
        return out
    tp = t[positive]
    kappa = model.kappa
    if abs(kappa - 0.5) < 1e-15:
        out[positive] = np.exp(-tp)
    elif abs((kappa - 0.5) - round(kappa - 0.5)) < 1e-12:
        out[positive] = _half_integer_matern(tp, kappa)
    else:
        out[positive] = _general_matern(tp, kappa)
    return np.clip(out, 0.0, 1.0)


@dataclass(frozen=True)
class SeparableSTCovariance:
    """r(u, v) = r1(u) * rho^|v| at integer time lags v."""

    spatial: CovarianceModel
    temporal_rho: float = 0.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.temporal_rho) and abs(self.temporal_rho) < 1):
            raise InvalidInputError(f"temporal_rho must satisfy |rho| < 1, got {self.temporal_rho}")

    def temporal_correlation(self, v: np.ndarray | int) -> np.ndarray:
        v = np.abs(np.asarray(v))
        return np.power(self.temporal_rho, v).astype(float)

    def correlation(self, u: np.ndarray | float, v: np.ndarray | int) -> np.ndarray:
        return correlation(self.spatial, u) * self.temporal_correlation(v)


def circulant_base(model: CovarianceModel, grid: GridSpec) -> np.ndarray:
    """First row of the block-circulant covariance on the extended grid, shape (NY, NX)."""
    hx, hy = grid.toroidal_offsets()
    distance = np.hypot(hx[None, :], hy[:, None])
    return model.sigma2 * correlation(model, distance)


class SpectralSummary(NamedTuple):
    eigenvalues: np.ndarray
    min_eigenvalue: float
    n_negative: int
    clamped: bool


def spectral_check(base_row: np.ndarray) -> SpectralSummary:
    """Eigenvalues of the circulant embedding (its 2-D DFT), small negatives clamped."""
    base_row = np.asarray(base_row, dtype=float)
    transformed = fft.fft2(base_row)
    scale = max(1.0, float(np.abs(transformed.real).max(initial=0.0)))
    if float(np.abs(transformed.imag).max(initial=0.0)) > IMAG_TOLERANCE * scale:
        raise InvalidInputError("base row is not symmetric under the torus group")
    eigenvalues = transformed.real
    min_eigenvalue = float(eigenvalues.min())
    negative = eigenvalues < 0
    n_negative = int(negative.sum())
    sigma2 = float(base_row.flat[0])
    if min_eigenvalue < -CLAMP_TOLERANCE * sigma2:
        raise EmbeddingError(
            f"circulant embedding is not positive semi-definite (min eigenvalue {min_eigenvalue:.3e}); "
            "increase grid.extension_factor",
            deficit=-min_eigenvalue,
        )
    if n_negative:
        eigenvalues = np.where(negative, 0.0, eigenvalues)
    return SpectralSummary(
        eigenvalues=eigenvalues,
        min_eigenvalue=min_eigenvalue,
        n_negative=n_negative,
        clamped=bool(n_negative),
    )
