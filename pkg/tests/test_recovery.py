"""
Flow-line recovery from fans, the inversion z -> -1/z and the Hausdorff ladder
"""

import numpy as np
import pytest

from analysis.recovery import (
    component_brackets,
    fan_right_boundary,
    fan_unit,
    invert_trace,
    inversion_mask,
    ladder_seed,
    left_mask,
    masked_fan_stats,
    recover_flow_line,
    recovery_error,
    reversal_angle_range,
    reversal_stats,
    reversed_setup,
    summarize_ladder,
)
from fields.fan import FanSet, build_fan, ig_constants
from fields.gff import fan_boundary, harmonic_extension
from topology.components import extract_components
from utils.errors import ParameterError
from utils.rng import stream


def _flat_fan(n: int = 65):
    """Three straight rays from the origin: the angle-0 ray is vertical"""
    params = ig_constants(2.0)
    field = harmonic_extension(n, n, fan_boundary(params, n, n))
    fan = build_fan(field, params, -1.0, 1.0, 3)
    return fan, extract_components(fan.raster)


class TestLeftMask:
    def test_vertical_line(self):
        pts = np.array([10 + 0j, 10 + 20j])
        mask = left_mask(pts, (21, 21))
        assert np.all(mask[:, :10])
        assert not mask[:, 10:].any()

    def test_brackets_order_components(self):
        fan, cm = _flat_fan(33)
        brackets = component_brackets(fan, cm)
        assert brackets[0] == 0
        # bottom-left corner lies left of every ray, bottom-right right of every ray
        assert brackets[cm.labels[1, 0]] == 3
        assert brackets[cm.labels[0, 32]] == 0


class TestRecovery:
    def test_lowest_angle_is_the_right_boundary(self):
        fan, cm = _flat_fan()
        recovered = recover_flow_line(fan, cm, -1.0)
        np.testing.assert_array_equal(recovered.points, fan_right_boundary(fan, cm).points)
        assert recovered.meta["recovered"]

    def test_right_boundary_comes_from_the_raster(self):
        n = 33
        raster = np.zeros((n, n), dtype=bool)
        k = np.arange(17)
        raster[k, 16 + k] = True
        fan = FanSet(
            raster=raster, traces=[], params=ig_constants(2.0), angle_grid=np.array([0.0]), meta={"origin": 16 + 0j}
        )
        boundary = fan_right_boundary(fan, extract_components(raster))
        np.testing.assert_array_equal(boundary.points, (16 + k) + 1j * k)

    def test_mid_angle_matches_the_traced_ray(self):
        fan, cm = _flat_fan()
        direct = dict(fan.traces)[0.0]
        recovered = recover_flow_line(fan, cm, 0.0)
        assert recovered.points[0] == pytest.approx(fan.origin, abs=1.0)
        assert recovery_error(recovered, direct, 65, fan.origin) < 0.25

    def test_angle_outside_the_grid(self):
        fan, cm = _flat_fan(33)
        with pytest.raises(ParameterError):
            recover_flow_line(fan, cm, 1.5)

    def test_fan_unit(self):
        assert fan_unit(513) == 256.0


class TestReversal:
    def test_angle_map(self):
        params = ig_constants(2.0, a=0.5, b=1.0)
        shift = -1.0 / params.chi
        assert reversal_angle_range(params, -0.5, 0.25) == pytest.approx((shift - 0.25, shift + 0.5))

    def test_reversed_boundary_data(self):
        params = ig_constants(2.0, a=0.5, b=0.5)
        rev, r1, r2 = reversed_setup(params, -0.5, 0.5)
        assert (rev.a, rev.b) == (0.0, 1.0)
        assert r2 - r1 == pytest.approx(1.0)

    def test_inversion_fixes_i(self):
        mask = inversion_mask((21, 21))
        assert mask[10, 10]
        assert not mask[0, 10]

    def test_inverted_vertical_segment(self):
        runs = invert_trace(np.array([10 + 5j, 10 + 20j]), (21, 21))
        assert len(runs) == 1
        np.testing.assert_allclose(runs[0].real, 10.0, atol=1e-9)
        assert runs[0][0].imag == pytest.approx(20.0)
        assert runs[0][-1].imag == pytest.approx(5.0)

    def test_masked_stats_of_an_empty_raster(self):
        stats = masked_fan_stats(np.zeros((9, 9), dtype=bool), np.ones((9, 9), dtype=bool))
        assert stats == {"area_fraction": 0.0, "n_components": 1, "connected": True, "graph_components": 1}

    def test_small_study(self):
        params = ig_constants(2.0, a=0.5, b=0.5)
        report = reversal_stats(params, -0.5, 0.5, 2, 17, 17, 2, lambda seed, tag: stream(7, "reversal", seed, tag))
        assert len(report["pushed"]) == len(report["direct"]) == 2
        assert report["reversed_boundary"] == [0.0, 1.0]
        assert set(report["ks_pvalues"]) == {"area_fraction", "n_components"}
        assert 0.0 < report["mask_fraction"] < 1.0


class TestLadder:
    def test_summary_rows(self):
        rows = summarize_ladder([0.1, 0.2], [[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        assert [r["median"] for r in rows] == [3.0, 4.0]
        assert rows[0]["n"] == 3

    def test_no_samples(self):
        rows = summarize_ladder([0.1], [])
        assert rows == [{"theta": 0.1, "median": None, "q90": None, "n": 0}]

    def test_distances_are_bounded(self, rng):
        params = ig_constants(2.0, a=0.5, b=0.5)
        out = ladder_seed(params, [0.0, -0.5], 33, 33, rng)
        assert len(out) == 2
        assert all(0.0 <= d <= 2.0 for d in out)
