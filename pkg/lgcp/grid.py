"""Computational grid, its toroidal extension, and data-to-cell mapping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import InvalidInputError

SNAP_FRACTION = 1e-9


@dataclass(frozen=True)
class Window:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self) -> None:
        values = (self.xmin, self.ymin, self.xmax, self.ymax)
        if not all(math.isfinite(v) for v in values):
            raise InvalidInputError(f"window bounds must be finite, got {values}")
        if self.xmax <= self.xmin or self.ymax <= self.ymin:
            raise InvalidInputError(f"degenerate window {values}: zero area")

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def shorter_side(self) -> float:
        return min(self.width, self.height)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.xmin, self.ymin, self.xmax, self.ymax)


def _next_pow2(n: int) -> int:
    return 1 << max(0, (int(n) - 1).bit_length())


@dataclass(frozen=True)
class GridSpec:
    """Regular lattice over a window plus its power-of-two toroidal extension.

    Arrays over the grid are indexed ``[iy, ix]``. Observation cells occupy
    ``[:ny, :nx]`` of the extended ``(NY, NX)`` lattice.
    """

    window: Window
    nx: int
    ny: int
    extension_factor: float = 2.0
    NX: int = field(init=False)
    NY: int = field(init=False)

    def __post_init__(self) -> None:
        if int(self.nx) < 1 or int(self.ny) < 1:
            raise InvalidInputError(f"nx and ny must be >= 1, got nx={self.nx} ny={self.ny}")
        if not self.extension_factor >= 2:
            raise InvalidInputError(f"extension_factor must be >= 2, got {self.extension_factor}")
        object.__setattr__(self, "nx", int(self.nx))
        object.__setattr__(self, "ny", int(self.ny))
        object.__setattr__(self, "NX", _next_pow2(math.ceil(self.extension_factor * self.nx)))
        object.__setattr__(self, "NY", _next_pow2(math.ceil(self.extension_factor * self.ny)))

    @property
    def dx(self) -> float:
        return self.window.width / self.nx

    @property
    def dy(self) -> float:
        return self.window.height / self.ny

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def extended_shape(self) -> tuple[int, int]:
        return (self.NY, self.NX)

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def n_extended(self) -> int:
        return self.NX * self.NY

    def centroids(self) -> tuple[np.ndarray, np.ndarray]:
        xs = self.window.xmin + (np.arange(self.nx) + 0.5) * self.dx
        ys = self.window.ymin + (np.arange(self.ny) + 0.5) * self.dy
        return xs, ys

    def observed_mask(self) -> np.ndarray:
        mask = np.zeros(self.extended_shape, dtype=bool)
        mask[: self.ny, : self.nx] = True
        return mask

    def embed(self, values: np.ndarray) -> np.ndarray:
        """Place observation-cell values into a zero-filled extended array."""
        values = np.asarray(values, dtype=float)
        lead = values.shape[:-2]
        out = np.zeros(lead + self.extended_shape)
        out[..., : self.ny, : self.nx] = values
        return out

    def restrict(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values)[..., : self.ny, : self.nx]

    def toroidal_offsets(self) -> tuple[np.ndarray, np.ndarray]:
        """Wrapped distances from cell 0 along each axis of the extended grid."""
        ix = np.arange(self.NX)
        iy = np.arange(self.NY)
        hx = np.minimum(ix, self.NX - ix) * self.dx
        hy = np.minimum(iy, self.NY - iy) * self.dy
        return hx, hy

    def toroidal_distance(self, a: tuple[int, int], b: tuple[int, int]) -> float:
        (ay, ax), (by, bx) = a, b
        ddx = abs(ax - bx) % self.NX
        ddy = abs(ay - by) % self.NY
        ddx = min(ddx, self.NX - ddx) * self.dx
        ddy = min(ddy, self.NY - ddy) * self.dy
        return math.hypot(ddx, ddy)


def build_grid(
    window: Window | tuple[float, float, float, float],
    nx: int,
    ny: int,
    extension_factor: float = 2.0,
) -> GridSpec:
    if not isinstance(window, Window):
        window = Window(*map(float, window))
    return GridSpec(window=window, nx=nx, ny=ny, extension_factor=float(extension_factor))


@dataclass(frozen=True, eq=False)
class PointPattern:
    """Event locations in a window, optionally marked by type and time.

    Points on the window's maximum edges are snapped inward by a tiny fraction
    of the window size; anything else outside the window is rejected.
    """

    points: np.ndarray
    window: Window
    marks: np.ndarray | None = None
    times: np.ndarray | None = None
    n_types: int | None = None

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=float).reshape(-1, 2).copy()
        w = self.window
        snap_x = SNAP_FRACTION * w.width
        snap_y = SNAP_FRACTION * w.height
        on_xmax = (pts[:, 0] >= w.xmax) & (pts[:, 0] <= w.xmax + snap_x)
        on_ymax = (pts[:, 1] >= w.ymax) & (pts[:, 1] <= w.ymax + snap_y)
        pts[on_xmax, 0] = w.xmax - snap_x
        pts[on_ymax, 1] = w.ymax - snap_y
        outside = (
            ~np.isfinite(pts).all(axis=1)
            | (pts[:, 0] < w.xmin)
            | (pts[:, 0] >= w.xmax)
            | (pts[:, 1] < w.ymin)
            | (pts[:, 1] >= w.ymax)
        )
        if outside.any():
            index = int(np.flatnonzero(outside)[0])
            raise InvalidInputError(
                f"point {index} at ({pts[index, 0]}, {pts[index, 1]}) lies outside window {w.as_tuple()}"
            )
        object.__setattr__(self, "points", pts)

        if self.marks is not None:
            marks = np.asarray(self.marks).reshape(-1)
            if marks.shape[0] != pts.shape[0]:
                raise InvalidInputError("marks must have one label per point")
            if marks.size and (np.any(marks != np.round(marks)) or marks.min() < 1):
                raise InvalidInputError("marks must be integer labels 1..m")
            marks = marks.astype(int)
            n_types = self.n_types if self.n_types is not None else max(2, int(marks.max(initial=0)))
            if n_types < 2:
                raise InvalidInputError(f"a marked pattern needs m >= 2 types, got {n_types}")
            if marks.size and marks.max() > n_types:
                bad = int(np.flatnonzero(marks > n_types)[0])
                raise InvalidInputError(f"point {bad} has label {marks[bad]} outside 1..{n_types}")
            object.__setattr__(self, "marks", marks)
            object.__setattr__(self, "n_types", int(n_types))

        if self.times is not None:
            times = np.asarray(self.times, dtype=float).reshape(-1)
            if times.shape[0] != pts.shape[0]:
                raise InvalidInputError("times must have one value per point")
            if times.size and (not np.isfinite(times).all() or times.min() < 0):
                bad = int(np.flatnonzero(~(times >= 0))[0])
                raise InvalidInputError(f"point {bad} has a negative or non-finite time")
            object.__setattr__(self, "times", times)

    def __len__(self) -> int:
        return int(self.points.shape[0])

    @property
    def n(self) -> int:
        return len(self)

    @property
    def intensity(self) -> float:
        return len(self) / self.window.area

    def of_type(self, k: int) -> "PointPattern":
        if self.marks is None:
            raise InvalidInputError("pattern has no marks")
        keep = self.marks == k
        return PointPattern(
            points=self.points[keep],
            window=self.window,
            times=None if self.times is None else self.times[keep],
        )


@dataclass(frozen=True, eq=False)
class CellCounts:
    """Counts on the extended grid; cells outside the window are unobserved."""

    counts: np.ndarray
    observed: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def _cell_indices(pattern: PointPattern, grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    w = grid.window
    ix = np.floor((pattern.points[:, 0] - w.xmin) / grid.dx).astype(int)
    iy = np.floor((pattern.points[:, 1] - w.ymin) / grid.dy).astype(int)
    bad = (ix < 0) | (ix >= grid.nx) | (iy < 0) | (iy >= grid.ny)
    if bad.any():
        index = int(np.flatnonzero(bad)[0])
        raise InvalidInputError(f"point {index} falls outside the observation grid")
    return ix, iy


def bin_points(pattern: PointPattern, grid: GridSpec) -> CellCounts:
    if pattern.window != grid.window:
        raise InvalidInputError(
            f"pattern window {pattern.window.as_tuple()} differs from grid window {grid.window.as_tuple()}"
        )
    ix, iy = _cell_indices(pattern, grid)
    counts = np.zeros(grid.extended_shape, dtype=np.int64)
    np.add.at(counts, (iy, ix), 1)
    return CellCounts(counts=counts, observed=grid.observed_mask())


def bin_marked_points(pattern: PointPattern, grid: GridSpec) -> np.ndarray:
    """Per-type observation-cell counts, shape ``(m, ny, nx)``."""
    if pattern.marks is None or pattern.n_types is None:
        raise InvalidInputError("bin_marked_points needs a marked pattern")
    if pattern.window != grid.window:
        raise InvalidInputError("pattern window differs from grid window")
    ix, iy = _cell_indices(pattern, grid)
    counts = np.zeros((pattern.n_types,) + grid.shape, dtype=np.int64)
    np.add.at(counts, (pattern.marks - 1, iy, ix), 1)
    return counts


def bin_spacetime_points(pattern: PointPattern, grid: GridSpec, time_steps: int) -> np.ndarray:
    """Counts per integer time step, shape ``(T, ny, nx)``; step t covers [t, t+1)."""
    if pattern.times is None:
        raise InvalidInputError("bin_spacetime_points needs a pattern with times")
    ix, iy = _cell_indices(pattern, grid)
    it = np.floor(pattern.times).astype(int)
    late = it >= time_steps
    if late.any():
        index = int(np.flatnonzero(late)[0])
        raise InvalidInputError(f"point {index} has time {pattern.times[index]} beyond {time_steps} steps")
    counts = np.zeros((time_steps,) + grid.shape, dtype=np.int64)
    np.add.at(counts, (it, iy, ix), 1)
    return counts


@dataclass(frozen=True, eq=False)
class RegionPartition:
    """Assignment of observation cells to regions with observed totals.

    ``region_of_cell`` holds region ids 1..m, with 0 meaning outside every
    region. ``offsets`` is the per-cell population multiplier d(x).
    """

    region_of_cell: np.ndarray
    region_totals: dict[int, int]
    offsets: np.ndarray

    def __post_init__(self) -> None:
        regions = np.asarray(self.region_of_cell).astype(int)
        offsets = np.asarray(self.offsets, dtype=float)
        if regions.shape != offsets.shape:
            raise InvalidInputError("region map and offsets must have the same shape")
        if regions.min(initial=0) < 0:
            raise InvalidInputError("region ids must be >= 0 (0 = outside)")
        if not np.isfinite(offsets).all() or offsets.min(initial=0.0) < 0:
            raise InvalidInputError("offsets must be finite and >= 0")
        totals = {int(k): int(v) for k, v in self.region_totals.items()}
        for region_id, total in totals.items():
            if region_id < 1:
                raise InvalidInputError(f"region id {region_id} must be >= 1")
            if total < 0:
                raise InvalidInputError(f"region {region_id} has a negative total {total}")
            if total > 0 and not np.any(offsets[regions == region_id] > 0):
                raise InvalidInputError(
                    f"region {region_id} has total {total} but no cell with positive offset"
                )
        object.__setattr__(self, "region_of_cell", regions)
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "region_totals", totals)

    @property
    def region_ids(self) -> list[int]:
        return sorted(self.region_totals)


class RegionCells(NamedTuple):
    by_region: dict[int, np.ndarray]
    outside: np.ndarray


def region_mask(partition: RegionPartition, grid: GridSpec) -> RegionCells:
    """Flat observation-cell indices (``iy * nx + ix``) for each region."""
    if partition.region_of_cell.shape != grid.shape:
        raise InvalidInputError(
            f"region map shape {partition.region_of_cell.shape} does not cover grid {grid.shape}"
        )
    flat = partition.region_of_cell.reshape(-1)
    by_region: dict[int, np.ndarray] = {}
    for region_id in sorted(set(partition.region_totals) | set(np.unique(flat[flat > 0]).tolist())):
        cells = np.flatnonzero(flat == region_id)
        if cells.size == 0 and partition.region_totals.get(region_id, 0) > 0:
            raise InvalidInputError(
                f"region {region_id} has total {partition.region_totals[region_id]} but no grid cells"
            )
        by_region[int(region_id)] = cells
    return RegionCells(by_region=by_region, outside=np.flatnonzero(flat == 0))
