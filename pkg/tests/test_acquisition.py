from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from burnscope.acquisition import (CLASS_NAMES, PhantomSpec, RasterPlan, ReferencePair, TofLog,
                                   concentric_layout, counts_to_reflectance, default_references,
                                   generate_phantom, plan_for_shape, plan_raster,
                                   reference_phantom_spec, simulate_scan, tof_compensate)
from burnscope.core import HyperCube, WavelengthGrid
from burnscope.errors import CalibrationError, DataQualityError, ParameterError, ShapeError


def brute_tiles(extent, step):
    n, covered = 0, 0.0
    while covered < extent - 1e-9:
        n += 1
        covered += step
    return max(n, 1)


class TestPlanRaster:
    def test_exact_tiling(self):
        p = plan_raster(10, 10, 1.0)
        assert p.n_positions == 100 and (p.rows, p.cols) == (10, 10)
        xs = np.unique(p.positions_mm[:, 0])
        np.testing.assert_allclose(np.diff(xs), 1.0)

    def test_overlap(self):
        p = plan_raster(10, 10, 1.0, overlap=0.1)
        assert p.step_mm == pytest.approx(0.9)
        assert p.n_positions == 144

    def test_spot_covers_region(self):
        p = plan_raster(3, 2, 5.0)
        assert p.n_positions == 1
        np.testing.assert_allclose(p.positions_mm[0], [1.5, 1.0])

    def test_serpentine_order(self):
        p = plan_raster(3, 2, 1.0)
        assert p.grid_index.tolist() == [[0, 0], [0, 1], [0, 2], [1, 2], [1, 1], [1, 0]]

    @pytest.mark.parametrize("args", [(0, 1, 1), (1, -1, 1), (1, 1, 0)])
    def test_non_positive(self, args):
        with pytest.raises(ParameterError):
            plan_raster(*args)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0.5, 60.0), st.floats(0.5, 60.0), st.floats(0.2, 5.0), st.floats(0.0, 0.45))
    def test_count_vs_brute_force(self, w, h, spot, overlap):
        p = plan_raster(w, h, spot, overlap)
        step = spot * (1 - overlap)
        if spot >= w and spot >= h:
            assert p.n_positions == 1
        else:
            assert p.n_positions == brute_tiles(w, step) * brute_tiles(h, step)

    def test_dict_round_trip(self):
        p = plan_raster(4, 3, 1.0, 0.2, 0.1)
        q = RasterPlan.from_dict(p.to_dict())
        np.testing.assert_array_equal(p.positions_mm, q.positions_mm)
        assert q.n_positions == p.n_positions and q.dwell_s == p.dwell_s

    def test_plan_for_shape(self):
        p = plan_for_shape(7, 9)
        assert (p.rows, p.cols) == (7, 9)


class TestPhantom:
    def test_no_absorbers_is_white(self):
        zero = {n: {"water": 0.0} for n in CLASS_NAMES}
        spec = PhantomSpec(concentric_layout(8, 8), zero, noise_std=0.0, jitter=0.0)
        cube, _ = generate_phantom(spec)
        np.testing.assert_array_equal(cube.data, 1.0)

    def test_deterministic(self):
        a, _ = generate_phantom(reference_phantom_spec(12, 12, seed=4))
        b, _ = generate_phantom(reference_phantom_spec(12, 12, seed=4))
        assert a.data.tobytes() == b.data.tobytes()

    def test_layout_has_all_classes(self):
        lay = concentric_layout(48, 48)
        assert set(np.unique(lay)) == {0, 1, 2, 3}
        assert lay[24, 24] == 3 and lay[0, 0] == 0

    def test_fiducials_masked(self):
        spec = reference_phantom_spec(16, 16, fiducials=[[1, 1, 2]])
        cube, labels = generate_phantom(spec)
        assert labels.mask.sum() == 16 * 16 - 4
        assert not labels.mask[1:3, 1:3].any()

    def test_bad_specs(self):
        with pytest.raises(ParameterError):
            PhantomSpec.from_dict({"weights": "nope"})
        with pytest.raises(ParameterError):
            reference_phantom_spec(8, 8, breathing_amplitude_mm=25.0)
        with pytest.raises(ParameterError):
            reference_phantom_spec(8, 8, noise_std=-1.0)


def _scan_setup(rows=8, cols=10, amplitude=0.0, value=None):
    spec = reference_phantom_spec(rows, cols, breathing_amplitude_mm=amplitude, seed=2)
    truth, _ = generate_phantom(spec)
    if value is not None:
        truth = truth.derive(np.full(truth.data.shape, value), "const")
    return spec, truth, plan_for_shape(rows, cols)


class TestScanAndCalibrate:
    def test_round_trip_without_breathing(self):
        spec, truth, plan = _scan_setup()
        raw, refs, _ = simulate_scan(truth, plan, spec)
        R = counts_to_reflectance(raw, refs)
        assert R.quantity == "reflectance"
        np.testing.assert_allclose(R.data, truth.data, rtol=1e-6)

    def test_white_target_gives_white_counts(self):
        spec, truth, plan = _scan_setup(value=1.0)
        raw, refs, _ = simulate_scan(truth, plan, spec)
        np.testing.assert_allclose(raw.data, np.broadcast_to(refs.white, raw.data.shape), rtol=1e-12)

    def test_breathing_scale_matches_replay(self):
        spec, truth, plan = _scan_setup(amplitude=5.0)
        raw, refs, _ = simulate_scan(truth, plan, spec, d_ref_mm=100.0)
        # replay the serpentine timeline independently
        expect = np.empty((plan.rows, plan.cols))
        for k, (r, c) in enumerate(plan.grid_index):
            t = (k + 0.5) * plan.dwell_s
            d = 100.0 + 5.0 * np.sin(2 * np.pi * t / spec.breathing_period_s)
            expect[r, c] = (100.0 / d) ** 2
        span = refs.white - refs.dark
        scale = (raw.data - refs.dark) / (truth.data * span)
        np.testing.assert_allclose(scale, np.broadcast_to(expect[..., None], scale.shape), rtol=1e-9)

    def test_compensation_inverts_breathing(self):
        spec, truth, plan = _scan_setup(amplitude=5.0)
        raw, refs, log = simulate_scan(truth, plan, spec)
        bad = np.max(np.abs(counts_to_reflectance(raw, refs).data / truth.data - 1))
        good = np.max(np.abs(counts_to_reflectance(tof_compensate(raw, log, plan, refs), refs).data
                             / truth.data - 1))
        assert good < 0.01 < bad

    def test_constant_distance_is_identity(self):
        spec, truth, plan = _scan_setup()
        raw, refs, log = simulate_scan(truth, plan, spec)
        out = tof_compensate(raw, log, plan, refs)
        np.testing.assert_allclose(out.data, raw.data, rtol=1e-15)

    def test_missing_log(self):
        spec, truth, plan = _scan_setup()
        raw, refs, _ = simulate_scan(truth, plan, spec)
        with pytest.raises(DataQualityError):
            tof_compensate(raw, None, plan, refs)

    def test_log_gap(self):
        spec, truth, plan = _scan_setup()
        raw, refs, log = simulate_scan(truth, plan, spec)
        keep = np.ones(log.timestamps_s.size, bool)
        keep[5:9] = False
        gappy = TofLog(log.timestamps_s[keep], log.distances_mm[keep], log.d_ref_mm)
        with pytest.raises(DataQualityError):
            tof_compensate(raw, gappy, plan, refs)

    def test_plan_shape_mismatch(self):
        spec, truth, _ = _scan_setup()
        with pytest.raises(ShapeError):
            simulate_scan(truth, plan_for_shape(3, 3), spec)


class TestReflectance:
    def _raw(self, grid, value):
        return HyperCube(np.broadcast_to(value, (2, 2, len(grid))).copy(), grid, "counts")

    def test_anchor_points(self):
        g = WavelengthGrid.arange(400.0, 1000.0, 50.0)
        refs = default_references(g)
        for raw, expect in ((refs.white, 1.0), (refs.dark, 0.0), ((refs.white + refs.dark) / 2, 0.5)):
            np.testing.assert_allclose(counts_to_reflectance(self._raw(g, raw), refs).data, expect,
                                       atol=1e-12)

    def test_white_below_dark_names_band(self):
        g = WavelengthGrid.arange(400.0, 1000.0, 50.0)
        dark = np.full(len(g), 100.0)
        white = dark + 50.0
        white[3] = 90.0
        with pytest.raises(CalibrationError, match="band 3"):
            counts_to_reflectance(self._raw(g, dark), ReferencePair(g.wavelengths_nm, dark, white))
