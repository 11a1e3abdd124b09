#!/usr/bin/env python3

import unittest

import numpy as np

from lgcp.errors import InvalidInputError
from lgcp.grid import (
    PointPattern,
    RegionPartition,
    Window,
    bin_marked_points,
    bin_points,
    bin_spacetime_points,
    build_grid,
    region_mask,
)


class GridTests(unittest.TestCase):
    def test_extension_is_power_of_two_at_least_twice_the_grid(self) -> None:
        grid = build_grid((0, 0, 100, 50), nx=100, ny=30)
        self.assertEqual((grid.NX, grid.NY), (256, 64))
        self.assertEqual(grid.shape, (30, 100))
        self.assertEqual(grid.extended_shape, (64, 256))
        self.assertAlmostEqual(grid.dx, 1.0)
        self.assertAlmostEqual(grid.cell_area, 50.0 / 30.0)

    def test_exact_power_of_two_is_kept(self) -> None:
        grid = build_grid((0, 0, 1, 1), nx=32, ny=32)
        self.assertEqual((grid.NX, grid.NY), (64, 64))

    def test_degenerate_window_and_bad_sizes_rejected(self) -> None:
        with self.assertRaises(InvalidInputError):
            Window(0, 0, 0, 1)
        with self.assertRaises(InvalidInputError):
            build_grid((0, 0, 1, 1), nx=0, ny=4)
        with self.assertRaises(InvalidInputError):
            build_grid((0, 0, 1, 1), nx=4, ny=4, extension_factor=1.5)

    def test_toroidal_distance_wraps(self) -> None:
        grid = build_grid((0, 0, 8, 8), nx=8, ny=8)
        self.assertAlmostEqual(grid.toroidal_distance((0, 0), (0, 15)), 1.0)
        self.assertAlmostEqual(grid.toroidal_distance((0, 0), (3, 4)), 5.0)
        hx, hy = grid.toroidal_offsets()
        self.assertAlmostEqual(hx[1], hx[-1])
        self.assertAlmostEqual(hy.max(), 8.0)

    def test_embed_and_restrict_are_inverse_on_observation_cells(self) -> None:
        grid = build_grid((0, 0, 1, 1), nx=5, ny=3)
        values = np.arange(15.0).reshape(3, 5)
        extended = grid.embed(values)
        self.assertEqual(extended.shape, grid.extended_shape)
        self.assertEqual(float(extended.sum()), float(values.sum()))
        np.testing.assert_array_equal(grid.restrict(extended), values)

    def test_bin_points_counts_every_point_once(self) -> None:
        grid = build_grid((0, 0, 4, 4), nx=4, ny=4)
        pattern = PointPattern(points=[[0.5, 0.5], [0.6, 0.4], [3.5, 1.5], [4.0, 4.0]], window=grid.window)
        counts = bin_points(pattern, grid)
        self.assertEqual(counts.total, 4)
        self.assertEqual(int(counts.counts[0, 0]), 2)
        self.assertEqual(int(counts.counts[1, 3]), 1)
        # points on the max edge are snapped into the last cell
        self.assertEqual(int(counts.counts[3, 3]), 1)
        self.assertEqual(int(counts.counts[~counts.observed].sum()), 0)

    def test_point_outside_window_rejected_with_index(self) -> None:
        window = Window(0, 0, 1, 1)
        with self.assertRaisesRegex(InvalidInputError, "point 1"):
            PointPattern(points=[[0.2, 0.2], [1.5, 0.2]], window=window)

    def test_marked_and_spacetime_binning(self) -> None:
        grid = build_grid((0, 0, 2, 2), nx=2, ny=2)
        pattern = PointPattern(points=[[0.5, 0.5], [1.5, 0.5], [1.5, 1.5]], window=grid.window, marks=[1, 2, 2])
        typed = bin_marked_points(pattern, grid)
        self.assertEqual(typed.shape, (2, 2, 2))
        self.assertEqual(int(typed[0].sum()), 1)
        self.assertEqual(int(typed[1].sum()), 2)

        timed = PointPattern(points=[[0.5, 0.5], [1.5, 0.5]], window=grid.window, times=[0.2, 2.9])
        counts = bin_spacetime_points(timed, grid, 3)
        self.assertEqual(counts.shape, (3, 2, 2))
        self.assertEqual(int(counts[0, 0, 0]), 1)
        self.assertEqual(int(counts[2, 0, 1]), 1)
        with self.assertRaises(InvalidInputError):
            bin_spacetime_points(timed, grid, 2)

    def test_marks_validated(self) -> None:
        window = Window(0, 0, 1, 1)
        with self.assertRaises(InvalidInputError):
            PointPattern(points=[[0.1, 0.1]], window=window, marks=[0])
        with self.assertRaises(InvalidInputError):
            PointPattern(points=[[0.1, 0.1]], window=window, marks=[3], n_types=2)

    def test_region_mask_uses_flat_row_major_indices(self) -> None:
        grid = build_grid((0, 0, 3, 2), nx=3, ny=2)
        regions = np.array([[1, 1, 2], [0, 2, 2]])
        partition = RegionPartition(regions, {1: 4, 2: 1}, np.ones(grid.shape))
        cells = region_mask(partition, grid)
        np.testing.assert_array_equal(cells.by_region[1], [0, 1])
        np.testing.assert_array_equal(cells.by_region[2], [2, 4, 5])
        np.testing.assert_array_equal(cells.outside, [3])

    def test_region_with_total_but_no_population_rejected(self) -> None:
        regions = np.array([[1, 2]])
        offsets = np.array([[1.0, 0.0]])
        with self.assertRaises(InvalidInputError):
            RegionPartition(regions, {1: 1, 2: 3}, offsets)


if __name__ == "__main__":
    unittest.main()
