"""
Bessel processes: exact sampling, densities, excursions and the excursion PPP
"""

import math

import numpy as np
import pytest
from scipy import integrate

from processes.bessel import (
    BesselParams,
    besq_step,
    bessel_transition_density,
    concatenate_excursions,
    delta_from_rho,
    excursion_max_exceedance,
    sample_besq_at,
    sample_bessel_excursion,
    sample_bessel_path,
    sample_bessel_paths,
    sample_excursion_ppp,
    sample_excursion_sde,
    time_grid,
)
from utils.errors import DomainError, ParameterError


def _mean_and_se(x):
    x = np.asarray(x, dtype=float)
    return x.mean(), x.std(ddof=1) / math.sqrt(x.size)


class TestParams:
    def test_derived_exponents(self):
        p = BesselParams(3.0)
        assert p.drift_a == 1.0
        assert p.nu == 0.5

    def test_non_positive_dimension_rejected(self):
        with pytest.raises(ParameterError):
            BesselParams(0.0)

    def test_delta_from_rho(self):
        assert delta_from_rho(0.0, 2.0) == 3.0
        assert delta_from_rho(-2.0, 2.0) == 1.0
        assert delta_from_rho(-1.0, 4.0) == 1.5


class TestExactSampling:
    @pytest.mark.parametrize("delta", [0.5, 1.0, 1.5, 3.0])
    def test_terminal_mean(self, rng, delta):
        """E[Y_T] = y0 + delta T for BESQ^delta"""
        y = sample_besq_at([0.0, 1.0], 0.0, delta, rng, size=10_000)[:, -1]
        mean, se = _mean_and_se(y)
        assert abs(mean - delta) <= 4.0 * se

    def test_terminal_mean_from_positive_start(self, rng):
        y = sample_besq_at([0.0, 0.5], 2.0, 1.5, rng, size=10_000)[:, -1]
        mean, se = _mean_and_se(y)
        assert abs(mean - (2.0 + 0.75)) <= 4.0 * se

    def test_step_keeps_shape(self, rng):
        assert isinstance(besq_step(1.0, 2.0, 0.1, rng), float)
        assert besq_step(np.ones((3, 4)), 2.0, 0.1, rng).shape == (3, 4)

    def test_negative_state_rejected(self, rng):
        with pytest.raises(ParameterError):
            besq_step(-1.0, 2.0, 0.1, rng)

    def test_grid_and_path_shapes(self, rng):
        times = time_grid(1.0, 0.1)
        assert times.size == 11
        assert times[-1] == pytest.approx(1.0)
        paths = sample_bessel_paths(BesselParams(2.0), 0.0, 1.0, 0.1, 5, rng)
        assert paths.shape == (5, 11)
        assert np.all(paths >= 0)
        assert np.all(paths[:, 0] == 0)

    def test_single_path(self, rng):
        path = sample_bessel_path(BesselParams(1.5), 1.0, 1.0, 0.01, rng)
        assert path.values[0] == pytest.approx(1.0)
        assert path.times.shape == path.values.shape

    def test_reproducible_with_same_stream(self, rng_factory):
        a = sample_besq_at(time_grid(1.0, 0.1), 0.0, 1.0, rng_factory("besq"))
        b = sample_besq_at(time_grid(1.0, 0.1), 0.0, 1.0, rng_factory("besq"))
        np.testing.assert_array_equal(a, b)


class TestTransitionDensity:
    @pytest.mark.parametrize("delta", [1.0, 1.5, 3.0])
    def test_normalized_from_zero(self, delta):
        params = BesselParams(delta)
        mass, _ = integrate.quad(lambda y: bessel_transition_density(params, 1.0, 0.0, y), 0.0, np.inf)
        assert mass == pytest.approx(1.0, abs=1e-6)

    @pytest.mark.parametrize("delta", [1.5, 3.0])
    def test_normalized_from_positive_start(self, delta):
        params = BesselParams(delta)
        mass, _ = integrate.quad(lambda y: bessel_transition_density(params, 0.7, 1.2, y), 0.0, np.inf)
        assert mass == pytest.approx(1.0, abs=1e-6)

    def test_reflected_normal_for_delta_one(self):
        ys = np.arange(1, 31) * 0.1
        expected = np.sqrt(2.0 / math.pi) * np.exp(-ys * ys / 2.0)
        got = bessel_transition_density(BesselParams(1.0), 1.0, 0.0, ys)
        np.testing.assert_allclose(got, expected, rtol=0, atol=1e-12)

    def test_chapman_kolmogorov(self):
        params = BesselParams(3.0)
        direct = bessel_transition_density(params, 1.0, 0.5, 1.0)
        composed, _ = integrate.quad(
            lambda y: bessel_transition_density(params, 0.5, 0.5, y) * bessel_transition_density(params, 0.5, y, 1.0),
            0.0,
            np.inf,
        )
        assert composed == pytest.approx(direct, rel=1e-6)

    def test_scalar_in_scalar_out(self):
        assert isinstance(bessel_transition_density(BesselParams(2.0), 1.0, 0.0, 1.0), float)

    def test_domain_errors(self):
        params = BesselParams(2.0)
        with pytest.raises(DomainError):
            bessel_transition_density(params, 1.0, 0.0, 0.0)
        with pytest.raises(DomainError):
            bessel_transition_density(params, 1.0, -1.0, 1.0)
        with pytest.raises(ParameterError):
            bessel_transition_density(params, 0.0, 0.0, 1.0)


class TestExcursions:
    def test_excursion_starts_and_ends_at_zero(self, rng):
        exc = sample_bessel_excursion(BesselParams(1.0), 2.0, 1.0 / 64, rng)
        values = exc.path.values
        assert values[0] == 0.0
        assert abs(values[-1]) <= exc.tol_zero
        assert np.all(values >= 0)
        assert np.all(values[1:-1] > 0)
        assert exc.path.times[-1] == pytest.approx(2.0)
        assert exc.path.times.size == 129
        assert exc.maximum > 0

    def test_excursion_needs_subcritical_dimension(self, rng):
        with pytest.raises(ParameterError):
            sample_bessel_excursion(BesselParams(2.0), 1.0, 0.01, rng)

    def test_sde_excursion_stops_early(self, rng):
        path = sample_excursion_sde(BesselParams(1.0), 1.0, 0.001, rng)
        assert path.times[-1] == pytest.approx(0.9)
        assert path.values[0] == 0.0
        assert np.all(path.values >= 0)

    def test_exceedance_extremes(self, rng):
        params = BesselParams(1.0)
        p_low, _ = excursion_max_exceedance(params, 0.0, 20, 0.01, rng)
        p_high, se_high = excursion_max_exceedance(params, 100.0, 20, 0.01, rng)
        assert p_low == 1.0
        assert p_high == 0.0
        assert se_high == 0.0


class TestExcursionPPP:
    def test_expected_count_formula(self, rng):
        ppp = sample_excursion_ppp(BesselParams(1.0), 2.0, 0.01, np.inf, 0.01, rng, attach_paths=False)
        # (delta/2) eps int_{t_min}^inf t^{-3/2} dt = eps / sqrt(t_min)
        assert ppp.expected_count == pytest.approx(2.0 / math.sqrt(0.01))
        assert ppp.dropped_expected_length == pytest.approx(2.0 * math.sqrt(0.01))
        assert all(0.01 <= p.length_t for p in ppp.points)
        u = [p.local_time_u for p in ppp.points]
        assert u == sorted(u)

    def test_small_and_big_excursions(self, rng_factory):
        """
        Sub-unit length per unit local time is 1 and the number of excursions
        longer than 1 is delta eps / (2 - delta)
        """
        delta, eps = 1.0, 1.0
        params = BesselParams(delta)
        small, big = [], []
        for seed in range(400):
            ppp = sample_excursion_ppp(params, eps, 1e-3, np.inf, 0.01, rng_factory("ppp", seed), attach_paths=False)
            lengths = np.array([p.length_t for p in ppp.points])
            small.append((lengths[lengths < 1].sum() + ppp.dropped_expected_length) / eps)
            big.append(int((lengths >= 1).sum()))
        mean, se = _mean_and_se(small)
        assert abs(mean - 1.0) <= 4.0 * se
        mean, se = _mean_and_se(big)
        assert abs(mean - delta * eps / (2.0 - delta)) <= 4.0 * se

    def test_concatenation_glues_in_local_time_order(self, rng):
        ppp = sample_excursion_ppp(BesselParams(1.0), 0.5, 0.01, 1.0, 0.005, rng)
        path = concatenate_excursions(ppp)
        assert np.all(np.diff(path.times) >= 0)
        assert path.times[-1] == pytest.approx(ppp.total_length)
        assert path.values[0] == 0.0
        assert np.all(path.values >= 0)

    def test_concatenation_needs_paths(self, rng):
        ppp = sample_excursion_ppp(BesselParams(1.0), 1.0, 0.01, 1.0, 0.01, rng, attach_paths=False)
        assert ppp.points
        with pytest.raises(ParameterError):
            concatenate_excursions(ppp)

    def test_invalid_arguments(self, rng):
        with pytest.raises(ParameterError):
            sample_excursion_ppp(BesselParams(2.5), 1.0, 0.01, 1.0, 0.01, rng)
        with pytest.raises(ParameterError):
            sample_excursion_ppp(BesselParams(1.0), 1.0, 0.0, 1.0, 0.01, rng)
        with pytest.raises(ParameterError):
            sample_excursion_ppp(BesselParams(1.0), 1.0, 0.5, 0.1, 0.01, rng)
