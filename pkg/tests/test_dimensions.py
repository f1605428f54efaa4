"""
Box counting and the closed-form dimension formulas
"""

import math

import numpy as np
import pytest

from analysis.dimensions import (
    DimensionReport,
    boundary_dimension,
    box_counts,
    box_dimension,
    critical_angle,
    intersection_dimension,
    sle_dimension,
)
from utils.errors import ParameterError


def _koch(levels: int) -> np.ndarray:
    pts = np.array([0.0 + 0j, 1.0 + 0j])
    turn = np.exp(1j * math.pi / 3.0)
    for _ in range(levels):
        a, b = pts[:-1], pts[1:]
        d = (b - a) / 3.0
        new = np.empty(4 * len(a) + 1, dtype=complex)
        new[0:-1:4] = a
        new[1::4] = a + d
        new[2::4] = a + d + d * turn
        new[3::4] = a + 2.0 * d
        new[-1] = pts[-1]
        pts = new
    return pts


class TestFormulas:
    def test_intersection_dimension_value(self):
        assert intersection_dimension(2.0, math.pi / 2.0) == pytest.approx(0.6875)

    def test_boundary_dimension_value(self):
        assert boundary_dimension(3.0, -1.0) == pytest.approx(0.5)

    def test_critical_angle(self):
        assert critical_angle(2.0) == pytest.approx(math.pi)
        with pytest.raises(ParameterError):
            critical_angle(4.0)

    def test_sle_dimension(self):
        assert sle_dimension(2.0) == pytest.approx(1.25)
        assert sle_dimension(8.0) == 2.0
        assert sle_dimension(12.0) == 2.0

    @pytest.mark.parametrize("kappa", np.linspace(0.05, 3.95, 100))
    def test_endpoint_identities(self, kappa):
        assert intersection_dimension(kappa, 0.0) == pytest.approx(sle_dimension(kappa))
        assert intersection_dimension(kappa, critical_angle(kappa)) == pytest.approx(0.0, abs=1e-12)
        assert boundary_dimension(kappa, -2.0) == pytest.approx(1.0)
        assert boundary_dimension(kappa, kappa / 2.0 - 2.0) == pytest.approx(0.0, abs=1e-12)

    def test_ranges(self):
        with pytest.raises(ParameterError):
            intersection_dimension(2.0, -0.1)
        with pytest.raises(ParameterError):
            intersection_dimension(2.0, math.pi + 0.1)
        with pytest.raises(ParameterError):
            boundary_dimension(2.0, -2.5)
        with pytest.raises(ParameterError):
            sle_dimension(0.0)


class TestBoxCounting:
    def test_segment(self):
        report = box_dimension(np.linspace(0.0, 1.0, 5000) + 0j)
        assert report.slope == pytest.approx(1.0, abs=0.05)
        assert np.all(np.diff(report.scales) < 0)
        assert np.all(np.diff(report.counts) >= 0)

    def test_filled_square(self):
        g = np.linspace(0.0, 1.0, 200)
        xx, yy = np.meshgrid(g, g)
        report = box_dimension(np.column_stack([xx.ravel(), yy.ravel()]), n_scales=6)
        assert report.slope == pytest.approx(2.0, abs=0.05)
        assert report.r2 > 0.99

    def test_koch_curve(self):
        pts = _koch(6)
        report = box_dimension(pts, scales=3.0 ** -np.arange(1, 7))
        assert report.slope == pytest.approx(math.log(4.0) / math.log(3.0), abs=0.08)

    def test_counts_per_scale(self):
        pts = np.linspace(0.0, 1.0, 1001) + 0j
        np.testing.assert_array_equal(box_counts(pts, [0.5, 0.25, 0.125]), [2, 4, 8])

    def test_report_exports(self):
        report = DimensionReport(scales=np.array([0.5, 0.25]), counts=np.array([2, 4]), slope=1.0, r2=1.0)
        assert list(report.to_frame().columns) == ["scale", "count"]
        assert report.to_dict()["counts"] == [2, 4]

    def test_preconditions(self):
        with pytest.raises(ParameterError):
            box_dimension(np.linspace(0.0, 1.0, 10) + 0j)
        with pytest.raises(ParameterError):
            box_dimension(np.zeros(2000, dtype=complex))
        line = np.linspace(0.0, 1.0, 2000) + 0j
        with pytest.raises(ParameterError):
            box_dimension(line, scales=[0.5, 0.25, 0.125])
        with pytest.raises(ParameterError):
            box_dimension(line, scales=[0.5, 0.4, 0.3, 0.2])
