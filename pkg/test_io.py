#!/usr/bin/env python3

import json
import tempfile
import unittest
from pathlib import Path

import numpy as np

from lgcp.errors import DataFormatError
from lgcp.grid import PointPattern, Window, build_grid
from lgcp.io import (
    as_raster,
    chain_columns,
    read_ascii_grid,
    read_chain,
    read_fields,
    read_pattern,
    read_region_counts,
    write_ascii_grid,
    write_chain,
    write_fields,
    write_json,
    write_pattern,
    write_raster,
    write_region_counts,
)
from lgcp.mcmc import PosteriorSamples


class IOTestCase(unittest.TestCase):
    def setUp(self) -> None:
        self._tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self._tmp.name)

    def tearDown(self) -> None:
        self._tmp.cleanup()


class PatternIOTests(IOTestCase):
    def test_write_then_read_keeps_full_precision(self) -> None:
        window = Window(0, 0, 1, 1)
        rng = np.random.default_rng(0)
        pattern = PointPattern(points=rng.random((20, 2)), window=window, marks=rng.integers(1, 4, 20), n_types=3)
        path = write_pattern(self.dir / "pattern.csv", pattern)
        self.assertEqual(path.read_text().splitlines()[0], "x,y,mark")
        back = read_pattern(path, window, n_types=3)
        np.testing.assert_array_equal(back.points, pattern.points)
        np.testing.assert_array_equal(back.marks, pattern.marks)

    def test_bad_row_reports_line(self) -> None:
        path = self.dir / "pattern.csv"
        path.write_text("x,y\n0.1,0.2\n0.3,oops\n")
        with self.assertRaises(DataFormatError) as caught:
            read_pattern(path, Window(0, 0, 1, 1))
        self.assertEqual(caught.exception.line, 3)
        self.assertEqual(caught.exception.context()["path"], str(path))

    def test_wrong_field_count_and_header(self) -> None:
        path = self.dir / "pattern.csv"
        path.write_text("x,y\n0.1,0.2,0.3\n")
        with self.assertRaisesRegex(DataFormatError, ":2:"):
            read_pattern(path, Window(0, 0, 1, 1))
        path.write_text("lon,lat\n")
        with self.assertRaises(DataFormatError):
            read_pattern(path, Window(0, 0, 1, 1))
        with self.assertRaises(DataFormatError):
            read_pattern(self.dir / "missing.csv", Window(0, 0, 1, 1))

    def test_header_only_file_is_an_empty_pattern(self) -> None:
        path = self.dir / "pattern.csv"
        path.write_text("x,y,t\n")
        pattern = read_pattern(path, Window(0, 0, 1, 1))
        self.assertEqual(len(pattern), 0)
        self.assertEqual(pattern.times.shape, (0,))


class RasterIOTests(IOTestCase):
    def test_ascii_grid_is_written_north_first(self) -> None:
        grid = build_grid((10, 20, 13, 22), nx=3, ny=2)
        values = np.array([[1.0, 2.0, 3.0], [4.0, np.nan, 6.0]])
        path = write_ascii_grid(self.dir / "r.asc", as_raster(grid, values))
        lines = path.read_text().splitlines()
        self.assertEqual(lines[0], "ncols 3")
        self.assertEqual(lines[2], "xllcorner 10.0")
        self.assertEqual(lines[5], "NODATA_value -9999")
        self.assertEqual(lines[6].split(), ["4", "-9999", "6"])
        back = read_ascii_grid(path, grid)
        np.testing.assert_array_equal(back[0], values[0])
        self.assertTrue(np.isnan(back[1, 1]))

    def test_ascii_grid_errors(self) -> None:
        grid = build_grid((0, 0, 2, 2), nx=2, ny=2)
        path = write_ascii_grid(self.dir / "r.asc", as_raster(grid, np.ones((2, 2))))
        with self.assertRaises(DataFormatError):
            read_ascii_grid(path, build_grid((0, 0, 3, 3), nx=3, ny=3))
        text = path.read_text().splitlines()
        text[6] = "1"
        path.write_text("\n".join(text) + "\n")
        with self.assertRaises(DataFormatError) as caught:
            read_ascii_grid(path)
        self.assertEqual(caught.exception.line, 7)

    def test_rectangular_cells_use_dx_and_dy(self) -> None:
        grid = build_grid((0, 0, 2, 1), nx=2, ny=2)
        values = np.array([[1.0, 2.0], [3.0, 4.0]])
        path = write_ascii_grid(self.dir / "wide.asc", as_raster(grid, values))
        lines = path.read_text().splitlines()
        self.assertEqual(lines[4:7], ["dx 1.0", "dy 0.5", "NODATA_value -9999"])
        self.assertEqual(lines[7].split(), ["3", "4"])
        np.testing.assert_array_equal(read_ascii_grid(path, grid), values)
        lines[6] = "nodata -9999"
        path.write_text("\n".join(lines) + "\n")
        with self.assertRaises(DataFormatError) as caught:
            read_ascii_grid(path)
        self.assertEqual(caught.exception.line, 7)

    def test_csv_raster_layout(self) -> None:
        grid = build_grid((0, 0, 2, 1), nx=2, ny=1)
        path = write_raster(self.dir / "r.csv", as_raster(grid, np.array([[0.5, 1.5]])), fmt="csv")
        self.assertEqual(path.read_text().splitlines(), ["ix,iy,value", "0,0,0.5", "1,0,1.5"])
        with self.assertRaises(DataFormatError):
            write_raster(self.dir / "r.tif", as_raster(grid, np.zeros((1, 2))), fmt="tif")


class RegionCountIOTests(IOTestCase):
    def test_round_trip_and_validation(self) -> None:
        path = write_region_counts(self.dir / "counts.csv", {2: 5, 1: 0})
        self.assertEqual(path.read_text().splitlines(), ["region_id,count", "1,0", "2,5"])
        self.assertEqual(read_region_counts(path), {1: 0, 2: 5})
        path.write_text("region_id,count\n1,3\n1,4\n")
        with self.assertRaises(DataFormatError) as caught:
            read_region_counts(path)
        self.assertEqual(caught.exception.line, 3)
        path.write_text("region_id,count\n0,3\n")
        with self.assertRaises(DataFormatError):
            read_region_counts(path)


class ChainIOTests(IOTestCase):
    def _samples(self, pairs: int = 1, n_beta: int = 1) -> PosteriorSamples:
        n = 4
        return PosteriorSamples(
            fields=np.arange(n * 6, dtype=float).reshape(n, 2, 3) / 7.0,
            beta=np.linspace(0.1, 0.9, n * n_beta).reshape(n, n_beta),
            sigma=np.full((n, pairs), 0.5),
            phi=np.full((n, pairs), 2.0),
            logpost=np.array([-3.0, -2.5, -2.75, -2.6]),
            iterations=np.array([10, 20, 30, 40]),
            beta_names=tuple(["intercept", "z1", "z2"][:n_beta]),
        )

    def test_columns(self) -> None:
        self.assertEqual(chain_columns(self._samples()), ["iter", "logpost", "beta", "sigma", "phi"])
        self.assertEqual(
            chain_columns(self._samples(pairs=2, n_beta=2)),
            ["iter", "logpost", "beta_intercept", "beta_z1", "sigma_1", "phi_1", "sigma_2", "phi_2"],
        )

    def test_chain_and_fields_files(self) -> None:
        samples = self._samples(n_beta=3)
        columns = read_chain(write_chain(self.dir / "chain.csv", samples))
        np.testing.assert_array_equal(columns["iter"], [10, 20, 30, 40])
        np.testing.assert_array_equal(columns["beta_z2"], samples.beta[:, 2])
        fields = read_fields(write_fields(self.dir / "fields.txt", samples.fields))
        np.testing.assert_array_equal(fields, samples.fields)

    def test_fields_header_is_checked(self) -> None:
        path = self.dir / "fields.txt"
        path.write_text("# shape 2 2 2\n1 2 3 4\n")
        with self.assertRaises(DataFormatError):
            read_fields(path)
        path.write_text("1 2 3 4\n")
        with self.assertRaises(DataFormatError):
            read_fields(path)

    def test_json_handles_arrays(self) -> None:
        path = write_json(self.dir / "out.json", {"a": np.arange(3), "b": np.float64(1.5), "c": self.dir})
        self.assertEqual(json.loads(path.read_text()), {"a": [0, 1, 2], "b": 1.5, "c": str(self.dir)})


if __name__ == "__main__":
    unittest.main()
