"""Dataset ingestion and persistence: point CSVs, rasters, region counts, chains."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataFormatError
from .grid import GridSpec, PointPattern, Window
from .mcmc import PosteriorSamples
from .prediction import NODATA, Raster

ASCII_HEADER = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "NODATA_value")
# rectangular cells carry dx and dy in place of cellsize
ASCII_RECT_HEADER = ("ncols", "nrows", "xllcorner", "yllcorner", "dx", "dy", "NODATA_value")


def _float(text: str, path: Path, line: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataFormatError(f"{path}:{line}: column {column!r} is not a number: {text!r}", str(path), line) from None
    if not math.isfinite(value):
        raise DataFormatError(f"{path}:{line}: column {column!r} is not finite", str(path), line)
    return value


def read_pattern(path: str | Path, window: Window, n_types: int | None = None) -> PointPattern:
    """Read ``x,y[,mark][,t]`` rows; errors carry the 1-based file line."""
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"pattern file not found: {path}", str(path))
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None:
            raise DataFormatError(f"{path}: empty file, expected header x,y[,mark][,t]", str(path), 1)
        header = [h.strip() for h in header]
        if header[:2] != ["x", "y"] or any(h not in ("mark", "t") for h in header[2:]) or len(set(header)) != len(header):
            raise DataFormatError(f"{path}:1: header must be x,y[,mark][,t], got {','.join(header)}", str(path), 1)
        rows = []
        for row in reader:
            line = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise DataFormatError(
                    f"{path}:{line}: expected {len(header)} fields, got {len(row)}", str(path), line
                )
            rows.append([_float(cell.strip(), path, line, col) for cell, col in zip(row, header)])
    data = np.asarray(rows, dtype=float).reshape(-1, len(header))
    marks = data[:, header.index("mark")] if "mark" in header else None
    times = data[:, header.index("t")] if "t" in header else None
    return PointPattern(points=data[:, :2], window=window, marks=marks, times=times, n_types=n_types)


def write_pattern(path: str | Path, pattern: PointPattern) -> Path:
    path = Path(path)
    header = ["x", "y"]
    columns = [pattern.points[:, 0], pattern.points[:, 1]]
    if pattern.marks is not None:
        header.append("mark")
        columns.append(pattern.marks)
    if pattern.times is not None:
        header.append("t")
        columns.append(pattern.times)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for i in range(len(pattern)):
            row = []
            for name, column in zip(header, columns):
                row.append(str(int(column[i])) if name == "mark" else format(float(column[i]), ".17g"))
            writer.writerow(row)
    return path


def write_ascii_grid(path: str | Path, raster: Raster) -> Path:
    """ESRI ASCII grid; the first data row is the northernmost row of cells."""
    path = Path(path)
    grid = raster.grid
    values = raster.filled()[::-1]
    if math.isclose(grid.dx, grid.dy, rel_tol=1e-9):
        cells = [f"cellsize {grid.dx!r}"]
    else:
        cells = [f"dx {grid.dx!r}", f"dy {grid.dy!r}"]
    lines = [
        f"ncols {grid.nx}",
        f"nrows {grid.ny}",
        f"xllcorner {grid.window.xmin!r}",
        f"yllcorner {grid.window.ymin!r}",
        *cells,
        f"NODATA_value {raster.nodata:g}",
    ]
    lines.extend(" ".join(format(v, ".17g") for v in row) for row in values)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_ascii_grid(path: str | Path, grid: GridSpec | None = None) -> np.ndarray:
    """Values indexed ``[iy, ix]`` with iy = 0 at the south edge; NODATA becomes NaN."""
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"raster file not found: {path}", str(path))
    lines = path.read_text(encoding="utf-8").splitlines()
    layout = ASCII_HEADER
    if len(lines) > 4 and lines[4].lower().startswith("dx "):
        layout = ASCII_RECT_HEADER
    header: dict[str, float] = {}
    for number, key in enumerate(layout, start=1):
        if number > len(lines):
            raise DataFormatError(f"{path}: truncated header", str(path), number)
        parts = lines[number - 1].split()
        if len(parts) != 2 or parts[0].lower() != key.lower():
            raise DataFormatError(f"{path}:{number}: expected '{key} <value>'", str(path), number)
        header[key] = _float(parts[1], path, number, key)
    ncols, nrows = int(header["ncols"]), int(header["nrows"])
    if grid is not None and (ncols, nrows) != (grid.nx, grid.ny):
        raise DataFormatError(
            f"{path}: raster is {ncols}x{nrows} but the grid is {grid.nx}x{grid.ny}", str(path)
        )
    rows = []
    for offset, text in enumerate(lines[len(layout):], start=len(layout) + 1):
        if not text.strip():
            continue
        cells = text.split()
        if len(cells) != ncols:
            raise DataFormatError(f"{path}:{offset}: expected {ncols} values, got {len(cells)}", str(path), offset)
        rows.append([_float(c, path, offset, "value") for c in cells])
    if len(rows) != nrows:
        raise DataFormatError(f"{path}: expected {nrows} rows of values, got {len(rows)}", str(path))
    values = np.asarray(rows, dtype=float)[::-1]
    return np.where(values == header["NODATA_value"], np.nan, values)


def write_raster_csv(path: str | Path, raster: Raster) -> Path:
    path = Path(path)
    values = raster.filled()
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["ix", "iy", "value"])
        for iy in range(values.shape[0]):
            for ix in range(values.shape[1]):
                writer.writerow([ix, iy, format(values[iy, ix], ".17g")])
    return path


def write_raster(path: str | Path, raster: Raster, fmt: str = "asc") -> Path:
    if fmt == "asc":
        return write_ascii_grid(path, raster)
    if fmt == "csv":
        return write_raster_csv(path, raster)
    raise DataFormatError(f"unknown raster format {fmt!r}; expected 'asc' or 'csv'", str(path))


def read_region_counts(path: str | Path) -> dict[int, int]:
    """``region_id,count`` rows; ids >= 1, counts >= 0, no duplicates."""
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"region counts file not found: {path}", str(path))
    totals: dict[int, int] = {}
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = [h.strip() for h in next(reader, [])]
        if header != ["region_id", "count"]:
            raise DataFormatError(f"{path}:1: header must be region_id,count", str(path), 1)
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != 2:
                raise DataFormatError(f"{path}:{line}: expected 2 fields, got {len(row)}", str(path), line)
            try:
                region_id, count = int(row[0]), int(row[1])
            except ValueError:
                raise DataFormatError(f"{path}:{line}: region_id and count must be integers", str(path), line) from None
            if region_id < 1 or count < 0:
                raise DataFormatError(f"{path}:{line}: need region_id >= 1 and count >= 0", str(path), line)
            if region_id in totals:
                raise DataFormatError(f"{path}:{line}: duplicate region {region_id}", str(path), line)
            totals[region_id] = count
    return totals


def write_region_counts(path: str | Path, totals: dict[int, int]) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["region_id", "count"])
        for region_id in sorted(totals):
            writer.writerow([region_id, totals[region_id]])
    return path


def chain_columns(samples: PosteriorSamples) -> list[str]:
    names = ["iter", "logpost"]
    if samples.beta.shape[1] == 1:
        names.append("beta")
    else:
        names.extend(f"beta_{name}" for name in samples.beta_names)
    pairs = samples.sigma.shape[1]
    for k in range(pairs):
        suffix = "" if pairs == 1 else f"_{k + 1}"
        names.extend([f"sigma{suffix}", f"phi{suffix}"])
    return names


def write_chain(path: str | Path, samples: PosteriorSamples) -> Path:
    path = Path(path)
    pairs = samples.sigma.shape[1]
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(chain_columns(samples))
        for d in range(samples.n_draws):
            row = [str(int(samples.iterations[d])), format(samples.logpost[d], ".17g")]
            row.extend(format(b, ".17g") for b in samples.beta[d])
            for k in range(pairs):
                row.extend([format(samples.sigma[d, k], ".17g"), format(samples.phi[d, k], ".17g")])
            writer.writerow(row)
    return path


def read_chain(path: str | Path) -> dict[str, np.ndarray]:
    """Chain CSV as named columns."""
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"chain file not found: {path}", str(path))
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = [h.strip() for h in next(reader, [])]
        if header[:2] != ["iter", "logpost"]:
            raise DataFormatError(f"{path}:1: chain header must start with iter,logpost", str(path), 1)
        rows = []
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise DataFormatError(f"{path}:{line}: expected {len(header)} fields, got {len(row)}", str(path), line)
            rows.append([_float(cell, path, line, col) for cell, col in zip(row, header)])
    data = np.asarray(rows, dtype=float).reshape(-1, len(header))
    return {name: data[:, j] for j, name in enumerate(header)}


def write_fields(path: str | Path, fields: np.ndarray) -> Path:
    """Field draws as text, one row per draw and layer; the header records the shape."""
    path = Path(path)
    fields = np.asarray(fields, dtype=float)
    shape = fields.shape
    rows = fields.reshape(int(np.prod(shape[:-2])), shape[-2] * shape[-1])
    np.savetxt(path, rows, fmt="%.17g", header="shape " + " ".join(str(n) for n in shape))
    return path


def read_fields(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"fields file not found: {path}", str(path))
    with path.open(encoding="utf-8") as handle:
        first = handle.readline().lstrip("#").split()
    if not first or first[0] != "shape":
        raise DataFormatError(f"{path}:1: missing '# shape ...' header", str(path), 1)
    try:
        shape = tuple(int(n) for n in first[1:])
    except ValueError:
        raise DataFormatError(f"{path}:1: malformed shape header", str(path), 1) from None
    rows = np.loadtxt(path, ndmin=2)
    if rows.size != int(np.prod(shape)):
        raise DataFormatError(f"{path}: holds {rows.size} values, header promises shape {shape}", str(path))
    return rows.reshape(shape)


def read_covariates(paths: Iterable[str | Path], grid: GridSpec) -> np.ndarray:
    layers = []
    for path in paths:
        values = read_ascii_grid(path, grid)
        if np.isnan(values).any():
            raise DataFormatError(f"{path}: covariate raster has NODATA cells inside the window", str(path))
        layers.append(values)
    return np.stack(layers) if layers else np.zeros((0,) + grid.shape)


def as_raster(grid: GridSpec, values: np.ndarray, name: str = "") -> Raster:
    return Raster(grid=grid, values=values, nodata=NODATA, name=name)


def write_table(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[object]]) -> Path:
    """Plain CSV; floats are written with 17 significant digits."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(list(header))
        for row in rows:
            writer.writerow([format(v, ".17g") if isinstance(v, float) else v for v in row])
    return path


def _json_default(value: object) -> object:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"cannot serialise {type(value).__name__}")


def write_json(path: str | Path, payload: object) -> Path:
    path = Path(path)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")
    return path
