import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from tdbem.timebasis import (
    LAG_SHAPES,
    TimeGrid,
    hat_deriv,
    hat_eval,
    hats_to_pulses,
    pulse_eval,
    pulses_to_hats,
    radial_kernel,
    radial_kernel_closed_form,
)


def _lag_integral_by_quadrature(j, dt, r, n=40):
    """int_{I_n} chi_{n-j}(t - r) dt by adaptive quadrature of the indicator itself."""
    grid = TimeGrid(dt, n + 5)
    val, _ = integrate.quad(lambda t: float(pulse_eval(n - j, t - r, grid)), (n - 1) * dt, n * dt,
                            points=sorted({(n - j - 1) * dt + r, (n - j) * dt + r}), epsabs=1e-15, limit=200)
    return val


class TestTimeGrid:
    def test_rejects_bad_step(self):
        with pytest.raises(ValueError):
            TimeGrid(0.0, 3)
        with pytest.raises(ValueError):
            TimeGrid(0.1, 0)

    def test_horizon_rounding(self):
        grid = TimeGrid.from_horizon(2.5, 0.1)
        assert grid.n_steps == 25
        assert grid.T == pytest.approx(2.5)
        assert TimeGrid.from_horizon(1.0, 0.3).n_steps == 4

    def test_times(self):
        np.testing.assert_allclose(TimeGrid(0.5, 4).times, [0, 0.5, 1.0, 1.5, 2.0])


class TestHats:
    grid = TimeGrid(0.2, 10)

    def test_peak_and_support(self):
        for m in range(1, 10):
            assert hat_eval(m, m * 0.2, self.grid) == pytest.approx(1.0)
            assert hat_eval(m, (m - 1) * 0.2, self.grid) == pytest.approx(0.0, abs=1e-12)
            assert hat_eval(m, (m + 1.5) * 0.2, self.grid) == 0.0

    def test_partition_of_unity(self):
        t = np.linspace(0.2, 1.8, 301)
        total = sum(hat_eval(m, t, self.grid) for m in range(0, 11))
        np.testing.assert_allclose(total, 1.0, atol=1e-14)

    def test_derivative_legs(self):
        m = 4
        assert hat_deriv(m, 0.7, self.grid) == pytest.approx(1 / 0.2)
        assert hat_deriv(m, 0.9, self.grid) == pytest.approx(-1 / 0.2)
        assert hat_deriv(m, 1.3, self.grid) == 0.0

    def test_pulses_are_hat_derivatives(self, rng):
        psi = rng.normal(size=(3, 10))
        phi = pulses_to_hats(psi, 0.2)
        np.testing.assert_allclose(hats_to_pulses(phi, 0.2), psi, atol=1e-12)
        # phi = sum phi_m beta^m has slope psi^m on I_m
        t = 0.2 * (np.arange(1, 11) - 0.5)
        slope = np.array([sum(phi[0, m - 1] * hat_deriv(m, tt, self.grid) for m in range(1, 11)) for tt in t])
        np.testing.assert_allclose(slope, psi[0], atol=1e-10)


class TestRadialKernel:
    @pytest.mark.parametrize("dt", [0.1, 0.37, 1.0])
    @pytest.mark.parametrize("j", [0, 1, 2, 5])
    def test_matches_indicator_quadrature(self, j, dt):
        for r in np.linspace(0, (j + 2) * dt, 23):
            assert abs(radial_kernel(j, dt)(r) - _lag_integral_by_quadrature(j, dt, r)) <= 1e-12 * dt

    @pytest.mark.parametrize("j", [-1, -2, -7])
    def test_causal_lags_vanish(self, j):
        r = np.linspace(0.0, 50.0, 10_000)
        k = radial_kernel(j, 0.1)
        assert not np.any(k(r))
        assert not np.any(radial_kernel_closed_form(j, 0.1, r))
        assert _lag_integral_by_quadrature(j, 0.1, 0.0) == 0.0

    def test_value_at_zero(self):
        # the pulse-trial/indicator-test pairing puts the whole step on lag 0 at r = 0
        assert radial_kernel(0, 0.3)(0.0) == pytest.approx(0.3)
        assert radial_kernel(1, 0.3)(0.0) == 0.0

    def test_support(self):
        dt = 0.25
        for j in range(0, 6):
            lo, hi = radial_kernel(j, dt).support
            assert lo == max(0.0, (j - 1) * dt) and hi == pytest.approx((j + 1) * dt)
            r = np.linspace(0, 10 * dt, 2001)
            vals = radial_kernel(j, dt)(r)
            assert np.all(vals[(r < lo) | (r > hi)] == 0.0)

    def test_partition_of_unity(self):
        dt, n = 0.2, 12
        r = np.linspace(0, (n - 2) * dt, 997)
        total = sum(radial_kernel(j, dt)(r) for j in range(n))
        np.testing.assert_allclose(total, dt, atol=1e-14)

    @pytest.mark.parametrize("j", [0, 1, 3])
    def test_continuity_at_breakpoints(self, j):
        k = radial_kernel(j, 0.4)
        for b in k.breakpoints:
            left = k(max(b - 1e-13, 0.0))
            right = k(b + 1e-13)
            assert abs(left - right) < 1e-12

    def test_polynomial_forms_agree(self):
        dt = 0.3
        for j in range(4):
            k = radial_kernel(j, dt)
            for p, c in enumerate(k.coeffs_in_r()):
                lo = (k.first + p) * dt
                r = np.linspace(lo, lo + dt, 11)[1:-1]
                np.testing.assert_allclose(c[0] + c[1] * r + c[2] * r * r, k(r), atol=1e-14)

    def test_shape_table_is_causal(self):
        assert np.all(LAG_SHAPES[2] == 0.0)

    @settings(max_examples=200, deadline=None)
    @given(j=st.integers(-3, 30), dt=st.floats(1e-3, 10.0), s=st.floats(0.0, 40.0))
    def test_nonnegative_and_matches_closed_form(self, j, dt, s):
        r = s * dt
        v = float(radial_kernel(j, dt)(r))
        assert v >= 0.0
        assert v <= dt * (1 + 1e-14)
        assert v == pytest.approx(float(radial_kernel_closed_form(j, dt, r)), abs=1e-12 * dt)
