import numpy as np
import pytest

from srsw_calib import GridSpec, StaggeredField, interpolate, paper_grid, zeros
from srsw_calib.errors import FieldError, InterpolationError
from srsw_calib.grid import read_snapshot, state_from_arrays, write_snapshot


class TestGridSpec:
    def test_paper_defaults(self):
        g = paper_grid()
        assert (g.Nx, g.Ny) == (2224, 320)
        assert g.Lx == 27787.5e3 and g.Ly == 3975.0e3
        assert g.dx == pytest.approx(12494.379, abs=1e-2)
        assert g.dy == pytest.approx(12421.875, abs=1e-6)

    def test_minimum_size_enforced(self):
        with pytest.raises(FieldError):
            GridSpec(1e3, 1e3, 3, 8)
        with pytest.raises(FieldError):
            GridSpec(1e3, 0.0, 8, 8)

    def test_wrap_east_west(self, small_grid):
        g = small_grid
        assert g.wrap_east_west(g.Nx) == 0
        assert g.wrap_east_west(-1) == g.Nx - 1
        assert GridSpec(1e3, 1e3, 2224, 320).wrap_east_west(3) == 3

    def test_wrap_periodicity_property(self, small_grid):
        g = small_grid
        idx = np.arange(-3 * g.Nx, 3 * g.Nx)
        assert np.array_equal(g.wrap_east_west(idx + g.Nx), g.wrap_east_west(idx))

    def test_coarsened_below_minimum_rejected(self, small_grid):
        # 16x8 coarsened by 4 would be 4x2, under the 4x4 floor
        with pytest.raises(FieldError):
            small_grid.coarsened(4)

    def test_coarsened_divisibility(self):
        g = GridSpec(1e6, 5e5, 16, 8)
        with pytest.raises(FieldError, match="divide"):
            g.coarsened(5)
        cg = g.coarsened(2)
        assert (cg.Nx, cg.Ny) == (8, 4)
        assert cg.dx == 2 * g.dx


class TestStaggeredField:
    def test_rejects_nan(self, small_grid):
        vals = np.zeros(small_grid.shape)
        vals[3, 2] = np.nan
        with pytest.raises(FieldError, match=r"\(3, 2\)"):
            StaggeredField("h", small_grid, vals)

    def test_rejects_bad_shape_and_kind(self, small_grid):
        with pytest.raises(FieldError):
            StaggeredField("h", small_grid, np.zeros((3, 3)))
        with pytest.raises(FieldError):
            StaggeredField("x", small_grid, np.zeros(small_grid.shape))

    def test_values_frozen(self, small_grid):
        f = zeros(small_grid, "h")
        with pytest.raises(ValueError):
            f.values[0, 0] = 1.0

    def test_arithmetic_requires_matching_kind(self, small_grid):
        a = zeros(small_grid, "h")
        b = zeros(small_grid, "u")
        with pytest.raises(FieldError, match="'h'.*'u'"):
            a + b
        c = a + a
        assert c.kind == "h"

    def test_state_wall_condition(self, small_grid):
        v = np.zeros(small_grid.shape)
        v[2, 0] = 1.0
        with pytest.raises(FieldError, match="boundary rows"):
            state_from_arrays(small_grid, np.zeros(small_grid.shape), v,
                              np.zeros(small_grid.shape))


class TestInterpolate:
    @pytest.mark.parametrize("pair", [("h", "u"), ("u", "h"), ("h", "v"),
                                      ("v", "h"), ("h", "z"), ("z", "h")])
    def test_preserves_constants(self, small_grid, pair):
        src, dst = pair
        f = StaggeredField(src, small_grid, np.full(small_grid.shape, 3.25))
        out = interpolate(f, dst)
        assert out.kind == dst
        np.testing.assert_array_equal(out.values, 3.25)

    def test_two_point_mean_alternating(self, small_grid):
        vals = np.zeros(small_grid.shape)
        vals[1::2, :] = 2.0  # columns 0,2,.. -> 0, columns 1,3,.. -> 2
        out = interpolate(StaggeredField("h", small_grid, vals), "u")
        np.testing.assert_allclose(out.values, 1.0)

    def test_four_point_corner_average(self, small_grid):
        vals = np.zeros(small_grid.shape)
        # z point (3, 3) averages h points (3,3), (2,3), (3,2), (2,2)
        vals[3, 3], vals[2, 3], vals[3, 2], vals[2, 2] = 1.0, 2.0, 3.0, 4.0
        out = interpolate(StaggeredField("h", small_grid, vals), "z")
        assert out.values[3, 3] == pytest.approx(2.5)

    def test_incompatible_pair_names_both(self, small_grid):
        f = zeros(small_grid, "u")
        with pytest.raises(InterpolationError, match="'u'.*'v'"):
            interpolate(f, "v")

    def test_linear_in_x_hits_midpoint(self, small_grid):
        g = small_grid
        X, _ = g.mesh("h")
        f = StaggeredField("h", g, 2.0e-3 * X)
        out = interpolate(f, "u")
        Xu, _ = g.mesh("u")
        # exact away from the periodic seam column
        np.testing.assert_allclose(out.values[1:, :], 2.0e-3 * Xu[1:, :], rtol=1e-14)

    def test_linear_in_y_hits_midpoint(self, small_grid):
        g = small_grid
        _, Y = g.mesh("h")
        f = StaggeredField("h", g, 5.0e-4 * Y)
        out = interpolate(f, "v")
        _, Yv = g.mesh("v")
        np.testing.assert_allclose(out.values[:, 1:], 5.0e-4 * Yv[:, 1:], rtol=1e-14)


class TestSnapshotFormat:
    def test_round_trip(self, small_grid, rng, tmp_path):
        vals = rng.normal(size=small_grid.shape)
        f = StaggeredField("v", small_grid, vals)
        path = tmp_path / "field.bin"
        write_snapshot(path, f, time=123.5)
        g, t = read_snapshot(path, small_grid)
        assert t == 123.5
        assert g.kind == "v"
        np.testing.assert_array_equal(g.values, vals)

    def test_layout_zonal_index_fastest(self, tmp_path):
        grid = GridSpec(4e3, 5e3, 4, 5)
        vals = np.arange(20.0).reshape(4, 5)  # vals[i, j] = 5*i + j
        path = tmp_path / "f.bin"
        write_snapshot(path, StaggeredField("h", grid, vals), 0.0)
        raw = path.read_bytes()
        assert raw[:4] == b"SRSW"
        data = np.frombuffer(raw, dtype="<f8", offset=25)
        # stream order: (i=0..3, j=0), (i=0..3, j=1), ...
        expected = [vals[i, j] for j in range(5) for i in range(4)]
        np.testing.assert_array_equal(data, expected)

    def test_dimension_mismatch(self, small_grid, tmp_path):
        path = tmp_path / "f.bin"
        write_snapshot(path, zeros(small_grid, "h"), 0.0)
        with pytest.raises(FieldError, match="16x8"):
            read_snapshot(path, GridSpec(1e3, 1e3, 8, 8))
