from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from burnscope.core import (LABEL_SENTINEL, HyperCube, LabelMap, ScalarMap, WavelengthGrid,
                            crop_bands, masked_mean, merge_cubes, resample_to_grid)
from burnscope.errors import ParameterError, RangeError, ShapeError


def _piecewise_linear(xs, ys, x):
    """Independent scalar interpolator used as an oracle."""
    for i in range(len(xs) - 1):
        if xs[i] <= x <= xs[i + 1]:
            t = (x - xs[i]) / (xs[i + 1] - xs[i])
            return ys[i] * (1 - t) + ys[i + 1] * t
    raise AssertionError("x outside grid")


class TestWavelengthGrid:
    def test_rejects_non_increasing(self):
        with pytest.raises(ParameterError):
            WavelengthGrid([500.0, 500.0, 600.0])

    def test_rejects_single_band(self):
        with pytest.raises(ParameterError):
            WavelengthGrid([500.0])

    def test_rejects_non_finite(self):
        with pytest.raises(ParameterError):
            WavelengthGrid([500.0, np.nan])

    def test_rejects_outside_envelope(self):
        with pytest.raises(RangeError):
            WavelengthGrid([300.0, 400.0])
        with pytest.raises(RangeError):
            WavelengthGrid([2400.0, 2600.0])

    def test_arange_endpoints(self):
        g = WavelengthGrid.arange(400.0, 2100.0, 2.0)
        assert len(g) == 851
        assert g.min == 400.0 and g.max == 2100.0

    def test_indices_and_nearest(self):
        g = WavelengthGrid.arange(400.0, 500.0, 10.0)
        assert g.indices_in(420.0, 450.0).tolist() == [2, 3, 4, 5]
        assert g.nearest_index(434.0) == 3


class TestHyperCube:
    def test_band_count_must_match(self, small_grid):
        with pytest.raises(ShapeError):
            HyperCube(np.zeros((2, 2, 3)), small_grid)

    def test_data_is_read_only(self, random_cube):
        with pytest.raises(ValueError):
            random_cube.data[0, 0, 0] = 1.0

    def test_pixels_respects_mask(self, random_cube):
        mask = np.ones((6, 5), bool)
        mask[0, 0] = False
        c = HyperCube(random_cube.data, random_cube.grid, mask=mask)
        assert c.pixels().shape == (29, random_cube.bands)

    def test_derive_appends_provenance(self, random_cube):
        c = random_cube.derive(random_cube.data * 2, "double")
        assert c.provenance[-1] == "double"


class TestMaps:
    def test_scalar_masked_pixels_are_nan(self):
        m = ScalarMap(np.ones((2, 2)), np.array([[True, False], [True, True]]))
        assert np.isnan(m.values[0, 1])
        assert not m.mask[0, 1]

    def test_label_sentinel(self):
        lab = LabelMap(np.array([[0, 1], [2, 3]]), 4, np.array([[True, True], [False, True]]))
        assert lab.labels[1, 0] == LABEL_SENTINEL
        assert lab.counts().tolist() == [1, 1, 0, 1]

    def test_label_range_checked(self):
        with pytest.raises(ParameterError):
            LabelMap(np.array([[0, 4]]), 4)

    def test_masked_mean(self):
        v = np.array([[1.0, 2.0], [3.0, 5.0]])
        lab = np.array([[0, 0], [1, 1]])
        mask = np.array([[True, True], [True, False]])
        assert masked_mean(v, mask, lab, 2).tolist() == [1.5, 3.0]


class TestResample:
    def test_identity(self, random_cube):
        out = resample_to_grid(random_cube, random_cube.grid)
        np.testing.assert_array_equal(out.data, random_cube.data)

    def test_constant(self, small_grid):
        c = HyperCube(np.full((2, 2, len(small_grid)), 0.5), small_grid)
        out = resample_to_grid(c, WavelengthGrid.linspace(433.3, 2001.7, 37))
        np.testing.assert_allclose(out.data, 0.5, atol=1e-15)

    def test_linear_midpoints_vs_brute_force(self, small_grid):
        wl = small_grid.wavelengths_nm
        spec = wl / 2100.0
        c = HyperCube(np.broadcast_to(spec, (1, 1, wl.size)).copy(), small_grid)
        mids = (wl[:-1] + wl[1:]) / 2
        out = resample_to_grid(c, WavelengthGrid(mids))
        expect = [_piecewise_linear(wl, spec, x) for x in mids]
        np.testing.assert_allclose(out.data[0, 0], expect, rtol=1e-14)

    def test_beyond_source_range(self, small_grid):
        c = HyperCube(np.zeros((1, 1, len(small_grid))), small_grid)
        with pytest.raises(RangeError):
            resample_to_grid(c, WavelengthGrid.arange(400.0, 2200.0, 100.0))

    @settings(max_examples=30, deadline=None)
    @given(st.floats(400.0, 1500.0), st.floats(50.0, 500.0), st.integers(2, 40))
    def test_idempotent_on_own_grid(self, start, span, n):
        rng = np.random.default_rng(n)
        src = WavelengthGrid.arange(400.0, 2100.0, 5.0)
        c = HyperCube(rng.uniform(size=(2, 2, len(src))), src)
        target = WavelengthGrid.linspace(start, min(start + span, 2100.0), n)
        once = resample_to_grid(c, target)
        twice = resample_to_grid(once, target)
        np.testing.assert_array_max_ulp(once.data, twice.data, maxulp=1)

    def test_crop_then_resample_commutes(self, random_cube):
        target = WavelengthGrid.linspace(600.0, 1500.0, 77)
        a = resample_to_grid(crop_bands(random_cube, 590.0, 1510.0), target)
        b = resample_to_grid(random_cube, target)
        np.testing.assert_allclose(a.data, b.data, rtol=1e-12)


class TestCrop:
    def test_full_range_identity(self, random_cube):
        out = crop_bands(random_cube, 400.0, 2100.0)
        np.testing.assert_array_equal(out.data, random_cube.data)

    def test_count_matches_grid_scan(self):
        g = WavelengthGrid.arange(350.0, 2500.0, 7.0)
        c = HyperCube(np.zeros((1, 1, len(g))), g)
        expect = sum(1 for w in g.wavelengths_nm if 400.0 <= w <= 2100.0)
        assert crop_bands(c, 400.0, 2100.0).bands == expect

    def test_reversed_window(self, random_cube):
        with pytest.raises(ParameterError):
            crop_bands(random_cube, 1200.0, 800.0)

    def test_empty_window(self, random_cube):
        with pytest.raises(RangeError):
            crop_bands(random_cube, 401.0, 409.0)


class TestMerge:
    def _pair(self, vnir_val, swir_val, vnir_stop=1100.0):
        v = WavelengthGrid.arange(400.0, vnir_stop, 10.0)
        s = WavelengthGrid.arange(1050.0, 2100.0, 10.0)
        return (HyperCube(np.broadcast_to(vnir_val, (2, 2, len(v))).copy(), v),
                HyperCube(np.broadcast_to(swir_val, (2, 2, len(s))).copy(), s))

    def test_disjoint_concatenation(self):
        v = WavelengthGrid.arange(400.0, 1000.0, 10.0)
        s = WavelengthGrid.arange(1100.0, 2100.0, 10.0)
        a = HyperCube(np.ones((2, 2, len(v))), v)
        b = HyperCube(np.zeros((2, 2, len(s))), s)
        m = merge_cubes(a, b)
        assert m.bands == len(v) + len(s)
        np.testing.assert_array_equal(m.wavelengths,
                                      np.concatenate([v.wavelengths_nm, s.wavelengths_nm]))

    def test_constant(self):
        m = merge_cubes(*self._pair(0.3, 0.3))
        np.testing.assert_array_equal(m.data, 0.3)

    def test_overlap_takes_swir(self):
        m = merge_cubes(*self._pair(0.2, 0.7))
        over = (m.wavelengths >= 1050.0) & (m.wavelengths <= 1100.0)
        assert over.sum() == 6
        np.testing.assert_array_equal(m.data[..., over], 0.7)
        np.testing.assert_array_equal(m.data[..., m.wavelengths < 1050.0], 0.2)

    def test_spatial_mismatch(self):
        a, b = self._pair(0.2, 0.7)
        b2 = HyperCube(np.zeros((3, 2, b.bands)), b.grid)
        with pytest.raises(ShapeError):
            merge_cubes(a, b2)
