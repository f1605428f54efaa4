"""
Lattice GFF: boundary data, harmonic extension, sampling, smoothing and the flow-line tracer
"""

import math

import numpy as np
import pytest

from fields.fan import ig_constants
from fields.gff import (
    GFF_NORMALIZATION,
    BoundaryPiece,
    BoundarySpec,
    LatticeField,
    fan_boundary,
    harmonic_extension,
    laplacian_residual,
    sample_dgff,
    smooth_field,
    trace_flow_line,
)
from utils.errors import ParameterError


def _dirichlet_laplacian(my: int, mx: int) -> np.ndarray:
    """Dense 5-point Laplacian on the (my, mx) interior, row-major"""

    def second_difference(m):
        return 2.0 * np.eye(m) - np.eye(m, k=1) - np.eye(m, k=-1)

    return np.kron(np.eye(my), second_difference(mx)) + np.kron(second_difference(my), np.eye(mx))


def _constant_field(nx: int, ny: int, value: float) -> LatticeField:
    return harmonic_extension(nx, ny, BoundarySpec.constant(value))


class TestBoundarySpec:
    def test_piece_validation(self):
        with pytest.raises(ParameterError):
            BoundaryPiece("diagonal", 0.0, 1.0, 0.0)
        with pytest.raises(ParameterError):
            BoundaryPiece("top", 0.5, 0.5, 0.0)
        with pytest.raises(ParameterError):
            BoundaryPiece("top", 0.0, 1.0, float("nan"))

    def test_missing_side_rejected(self):
        spec = BoundarySpec(tuple(BoundaryPiece(s, 0.0, 1.0, 1.0) for s in ("bottom", "top", "left")))
        with pytest.raises(ParameterError):
            spec.render(5, 5)

    def test_overlap_rejected(self):
        pieces = BoundarySpec.constant(0.0).pieces + (BoundaryPiece("bottom", 0.2, 0.4, 1.0),)
        with pytest.raises(ParameterError):
            BoundarySpec(pieces).render(5, 5)

    def test_split_bottom(self):
        grid = BoundarySpec(
            (
                BoundaryPiece("bottom", 0.0, 0.5, -1.0),
                BoundaryPiece("bottom", 0.5, 1.0, 1.0),
                BoundaryPiece("top", 0.0, 1.0, 0.0),
                BoundaryPiece("left", 0.0, 1.0, 0.0),
                BoundaryPiece("right", 0.0, 1.0, 0.0),
            )
        ).render(5, 4)
        np.testing.assert_array_equal(grid[0], [-1.0, -1.0, 1.0, 1.0, 1.0])
        assert np.all(grid[1:-1, 1:-1] == 0)

    def test_dict_and_shift(self):
        spec = BoundarySpec((BoundaryPiece("top", 0.0, 1.0, 1.0, end_value=2.0),))
        assert BoundarySpec.from_dict(spec.to_dict()) == spec
        shifted = spec.shifted(0.5).pieces[0]
        assert (shifted.value, shifted.end_value) == (1.5, 2.5)


class TestHarmonicExtension:
    def test_constant_boundary(self):
        field = _constant_field(17, 11, 2.5)
        np.testing.assert_allclose(field.values, 2.5, atol=1e-10)

    def test_linear_data_is_reproduced(self):
        nx, ny = 13, 9
        spec = BoundarySpec(
            (
                BoundaryPiece("bottom", 0.0, 1.0, 0.0, end_value=1.0),
                BoundaryPiece("top", 0.0, 1.0, 0.0, end_value=1.0),
                BoundaryPiece("left", 0.0, 1.0, 0.0),
                BoundaryPiece("right", 0.0, 1.0, 1.0),
            )
        )
        field = harmonic_extension(nx, ny, spec)
        expected = np.tile(np.arange(nx) / (nx - 1), (ny, 1))
        np.testing.assert_allclose(field.values, expected, atol=1e-10)

    def test_matches_dense_solve(self):
        nx, ny = 11, 8
        params = ig_constants(2.0, a=0.3, b=1.1)
        field = harmonic_extension(nx, ny, fan_boundary(params, nx, ny))
        grid = fan_boundary(params, nx, ny).render(nx, ny)
        rhs = np.zeros((ny - 2, nx - 2))
        rhs[0] += grid[0, 1:-1]
        rhs[-1] += grid[-1, 1:-1]
        rhs[:, 0] += grid[1:-1, 0]
        rhs[:, -1] += grid[1:-1, -1]
        solved = np.linalg.solve(_dirichlet_laplacian(ny - 2, nx - 2), rhs.ravel())
        np.testing.assert_allclose(field.values[1:-1, 1:-1].ravel(), solved, atol=1e-10)
        assert laplacian_residual(field.values) < 1e-9

    def test_maximum_principle(self):
        nx, ny = 21, 15
        params = ig_constants(2.0, a=1.0, b=0.5)
        spec = fan_boundary(params, nx, ny)
        field = harmonic_extension(nx, ny, spec)
        rendered = spec.render(nx, ny)
        edge = np.concatenate([rendered[0], rendered[-1], rendered[:, 0], rendered[:, -1]])
        assert field.values.min() >= edge.min() - 1e-10
        assert field.values.max() <= edge.max() + 1e-10

    def test_grid_too_small(self):
        with pytest.raises(ParameterError):
            harmonic_extension(2, 5, BoundarySpec.constant(0.0))


class TestSampling:
    def test_boundary_kept(self, rng):
        params = ig_constants(2.0, a=0.5, b=0.5)
        spec = fan_boundary(params, 15, 10)
        field = sample_dgff(15, 10, spec, rng)
        rendered = spec.render(15, 10)
        np.testing.assert_array_equal(field.values[0], rendered[0])
        np.testing.assert_array_equal(field.values[:, -1], rendered[:, -1])
        assert field.meta["normalization"] == GFF_NORMALIZATION

    def test_green_covariance(self, rng):
        nx = ny = 9
        n = 4000
        samples = np.stack([sample_dgff(nx, ny, BoundarySpec.constant(0.0), rng).values for _ in range(n)])
        centre, east = samples[:, 4, 4], samples[:, 4, 5]
        green = GFF_NORMALIZATION * np.linalg.inv(_dirichlet_laplacian(ny - 2, nx - 2))
        c = 3 * 7 + 3
        var_exact, cov_exact = green[c, c], green[c, c + 1]

        assert abs(centre.mean()) <= 5.0 * math.sqrt(var_exact / n)
        assert abs(centre.var(ddof=1) - var_exact) <= 5.0 * var_exact * math.sqrt(2.0 / (n - 1))
        cov = np.cov(centre, east)[0, 1]
        assert abs(cov - cov_exact) <= 5.0 * math.sqrt((green[c, c] * green[c + 1, c + 1] + cov_exact**2) / n)

    def test_same_stream_same_field(self, rng_factory):
        a = sample_dgff(9, 7, BoundarySpec.constant(1.0), rng_factory("gff"))
        b = sample_dgff(9, 7, BoundarySpec.constant(1.0), rng_factory("gff"))
        np.testing.assert_array_equal(a.values, b.values)


class TestSmoothing:
    def test_radius_zero_copies(self, rng):
        field = sample_dgff(9, 9, BoundarySpec.constant(0.0), rng)
        smoothed = smooth_field(field, 0.0)
        np.testing.assert_array_equal(smoothed.values, field.values)
        assert smoothed.values is not field.values

    def test_smoothing_reduces_roughness(self, rng):
        field = sample_dgff(33, 33, BoundarySpec.constant(0.0), rng)
        smoothed = smooth_field(field, 1.5)
        assert smoothed.values[1:-1, 1:-1].std() < field.values[1:-1, 1:-1].std()
        assert np.all(smoothed.values[0] == 0.0)
        assert smoothed.meta["smoothing_radius"] == 1.5

    def test_negative_radius(self, rng):
        with pytest.raises(ParameterError):
            smooth_field(_constant_field(5, 5, 0.0), -1.0)


class TestLatticeField:
    def test_interpolation(self):
        field = harmonic_extension(
            5,
            5,
            BoundarySpec(
                (
                    BoundaryPiece("bottom", 0.0, 1.0, 0.0, end_value=4.0),
                    BoundaryPiece("top", 0.0, 1.0, 0.0, end_value=4.0),
                    BoundaryPiece("left", 0.0, 1.0, 0.0),
                    BoundaryPiece("right", 0.0, 1.0, 4.0),
                )
            ),
        )
        np.testing.assert_allclose(field.interpolate(np.array([1 + 1j, 2.5 + 3j])), [1.0, 2.5], atol=1e-10)

    def test_shift(self):
        field = _constant_field(5, 5, 1.0).shifted(2.0)
        np.testing.assert_allclose(field.values, 3.0, atol=1e-10)
        assert field.boundary == BoundarySpec.constant(3.0)

    def test_bytes_preserve_values_and_boundary(self, rng):
        field = sample_dgff(7, 5, fan_boundary(ig_constants(2.0, 0.2, 0.4), 7, 5), rng)
        back = LatticeField.from_bytes(field.to_bytes())
        np.testing.assert_array_equal(back.values, field.values)
        assert back.boundary == field.boundary
        assert field.to_bytes().startswith(b"{")

    def test_origin(self):
        assert _constant_field(9, 5, 0.0).origin == 4 + 0j


class TestFlowLine:
    def test_heads_north_on_constant_shifted_field(self):
        params = ig_constants(2.0)
        field = _constant_field(21, 21, params.chi * math.pi / 2.0)
        trace = trace_flow_line(field, 10 + 2j, 0.0, params.chi)
        assert trace.meta["status"] == "boundary"
        np.testing.assert_allclose(trace.points.real, 10.0, atol=1e-9)
        assert trace.points[-1].imag == pytest.approx(20.0)
        assert trace.meta["length"] == pytest.approx(18.0)

    def test_angle_turns_the_line(self):
        params = ig_constants(2.0)
        field = _constant_field(21, 21, params.chi * math.pi / 2.0)
        trace = trace_flow_line(field, 10 + 2j, -math.pi / 2.0, params.chi)
        assert trace.points[-1].real == pytest.approx(20.0)
        np.testing.assert_allclose(trace.points.imag, 2.0, atol=1e-9)

    def test_length_cap(self):
        params = ig_constants(2.0)
        field = _constant_field(41, 41, params.chi * math.pi / 2.0)
        trace = trace_flow_line(field, 20 + 2j, 0.0, params.chi, step=0.5, max_len=5.0)
        assert trace.meta["status"] == "max_len"
        assert trace.meta["length"] == pytest.approx(5.0)
        assert trace.times[-1] == pytest.approx(5.0)

    def test_invalid_arguments(self):
        field = _constant_field(9, 9, 0.0)
        with pytest.raises(ParameterError):
            trace_flow_line(field, 4 + 2j, 0.0, 0.0)
        with pytest.raises(ParameterError):
            trace_flow_line(field, 4 + 0j, 0.0, 1.0)
