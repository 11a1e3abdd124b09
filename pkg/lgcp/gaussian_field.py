"""Whitened representation of the latent Gaussian field S on the extended grid.

S = mean_offset + L @ gamma, where L is the symmetric square root of the
block-circulant covariance, applied in the spectral domain. L is
self-adjoint, so the same transform carries likelihood gradients from S back
to gamma.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import fft

from .covariance import CovarianceModel, circulant_base, spectral_check
from .errors import EmbeddingError
from .grid import GridSpec

_AXES = (-2, -1)


class FieldOperator:
    def __init__(self, base_row: np.ndarray) -> None:
        summary = spectral_check(base_row)
        self.base_row = np.asarray(base_row, dtype=float)
        self.eigenvalues = summary.eigenvalues
        self.sqrt_eigenvalues = np.sqrt(summary.eigenvalues)
        self.clamped = summary.clamped

    @property
    def shape(self) -> tuple[int, int]:
        return self.base_row.shape

    def apply(self, gamma: np.ndarray) -> np.ndarray:
        gamma = np.asarray(gamma, dtype=float)
        spectrum = fft.fft2(gamma, axes=_AXES)
        return fft.ifft2(spectrum * self.sqrt_eigenvalues, axes=_AXES).real

    def transport(self, grad_s: np.ndarray) -> np.ndarray:
        return self.apply(grad_s)

    def log_density(self, centred: np.ndarray) -> float:
        """Gaussian log-density of a centred field under the circulant covariance."""
        if np.any(self.eigenvalues <= 0):
            raise EmbeddingError("covariance is singular on the torus; density undefined", deficit=0.0)
        n = self.eigenvalues.size
        spectrum = fft.fft2(np.asarray(centred, dtype=float), axes=_AXES)
        quad = float(np.sum(np.abs(spectrum) ** 2 / self.eigenvalues)) / n
        log_det = float(np.sum(np.log(self.eigenvalues)))
        return -0.5 * quad - 0.5 * log_det - 0.5 * n * math.log(2.0 * math.pi)


@lru_cache(maxsize=8)
def field_operator(model: CovarianceModel, grid: GridSpec) -> FieldOperator:
    return FieldOperator(circulant_base(model, grid))


@dataclass(frozen=True, eq=False)
class WhitenedField:
    gamma: np.ndarray

    def prior_log_density(self) -> float:
        return -0.5 * float(np.sum(np.square(self.gamma)))


@dataclass(frozen=True, eq=False)
class LatentField:
    values: np.ndarray
    mean_offset: float
    grid: GridSpec

    @property
    def observed(self) -> np.ndarray:
        return self.grid.restrict(self.values)


def apply_sqrt_cov(gamma: np.ndarray, base_row: np.ndarray | FieldOperator) -> np.ndarray:
    operator = base_row if isinstance(base_row, FieldOperator) else FieldOperator(base_row)
    return operator.apply(gamma)


def grad_transport(dlogl_ds: np.ndarray, base_row: np.ndarray | FieldOperator) -> np.ndarray:
    operator = base_row if isinstance(base_row, FieldOperator) else FieldOperator(base_row)
    return operator.transport(dlogl_ds)


def sample_field(
    model: CovarianceModel,
    grid: GridSpec,
    rng: np.random.Generator,
    size: int | None = None,
    mean_offset: bool = True,
) -> LatentField:
    shape = grid.extended_shape if size is None else (size,) + grid.extended_shape
    gamma = rng.standard_normal(shape)
    offset = model.mean_offset if mean_offset else 0.0
    values = field_operator(model, grid).apply(gamma) + offset
    return LatentField(values=values, mean_offset=offset, grid=grid)
