import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy import integrate

from tdbem.bestapprox import (
    DegenerateFitError,
    SingularModel,
    best_approx_errors,
    best_approx_rate,
    corner_model_errors,
    edge_model_error_exact,
    fit_rate,
    quarter_disk_mesh,
)


def _edge_error_by_quadrature(nu, h):
    a = nu - 1.0
    mean = integrate.quad(lambda y: y**a, 0, h, epsabs=0, epsrel=1e-13, limit=200)[0] / h
    return integrate.quad(lambda y: (y**a - mean) ** 2, 0, h, epsabs=0, epsrel=1e-13, limit=200)[0]


class TestEdgeModel:
    def test_smooth_case_is_exact(self):
        assert edge_model_error_exact(1.0, 0.3) == 0.0

    def test_known_value(self):
        # nu = 2: y minus its mean 1/2 on (0, 1) has squared norm 1/12
        assert edge_model_error_exact(2.0, 1.0) == pytest.approx(1.0 / 12.0, rel=1e-15)
        # nu = 1.5: sqrt(y) minus 2/3 gives 1/2 - 4/9 = 1/18
        assert edge_model_error_exact(1.5, 1.0) == pytest.approx(1.0 / 18.0, rel=1e-15)

    @pytest.mark.parametrize("nu", [0.6, 0.75, 1.5, 2.5])
    @pytest.mark.parametrize("h", [1.0, 0.1, 1e-3])
    def test_against_quadrature(self, nu, h):
        exact = edge_model_error_exact(nu, h)
        assert abs(exact - _edge_error_by_quadrature(nu, h)) <= 1e-10 * max(exact, 1e-300) + 1e-18

    @settings(max_examples=50, deadline=None)
    @given(nu=st.floats(0.55, 3.0), h=st.floats(1e-4, 1.0), c=st.floats(0.1, 10.0))
    def test_scaling_law(self, nu, h, c):
        assume(abs(nu - 1.0) > 1e-3)
        ratio = edge_model_error_exact(nu, c * h) / edge_model_error_exact(nu, h)
        assert ratio == pytest.approx(c ** (2 * nu - 1), rel=1e-10)

    @pytest.mark.parametrize("nu,h", [(0.5, 1.0), (0.2, 1.0), (1.5, 0.0), (1.5, -1.0)])
    def test_invalid(self, nu, h):
        with pytest.raises(ValueError):
            edge_model_error_exact(nu, h)


@pytest.mark.parametrize("nu,target", [(1.5, 1.0), (0.75, 0.25)])
def test_edge_rates(nu, target):
    # nu = 1.5 carries a sqrt(log(1/h)) factor, so the fit needs fine levels
    levels = [1 << k for k in range(10, 17)]
    assert abs(best_approx_rate(SingularModel("edge", nu), levels) - target) <= 0.05


def test_corner_rate():
    rate = best_approx_rate(SingularModel("corner", 2.0 / 3.0), range(2, 7))
    assert abs(rate - 2.0 / 3.0) <= 0.1


def test_edge_errors_sum_over_cells():
    # total over n cells against direct quadrature of the piecewise mean
    nu, n = 0.75, 8
    h, err = best_approx_errors(SingularModel("edge", nu), [n])
    total = sum(_edge_error_by_quadrature_shift(nu, k / n, 1 / n) for k in range(n))
    assert h[0] == 1 / n
    assert err[0] ** 2 == pytest.approx(total, rel=1e-9)


def _edge_error_by_quadrature_shift(nu, lo, h):
    a = nu - 1.0
    f = lambda y: y**a  # noqa: E731
    mean = integrate.quad(f, lo, lo + h, epsabs=0, epsrel=1e-13, limit=200)[0] / h
    return integrate.quad(lambda y: (f(y) - mean) ** 2, lo, lo + h, epsabs=0, epsrel=1e-13, limit=200)[0]


class TestCornerModel:
    def test_mesh(self):
        V, T = quarter_disk_mesh(2)
        assert len(T) == 32
        assert np.allclose(V[0], 0.0)
        r = np.linalg.norm(V, axis=1)
        assert r.max() == pytest.approx(1.0)

    def test_element_errors_against_2d_quadrature(self):
        lam = 2.0 / 3.0
        V, T = quarter_disk_mesh(1)
        _, err = corner_model_errors(lam, 1)
        f = lambda x, y: math.hypot(x, y) ** (lam - 1)  # noqa: E731
        for t in (0, 3, 5):
            P = V[T[t]]

            def over_tri(g):
                # map the reference triangle (u, v) with u + v <= 1
                J = abs(np.cross(P[1] - P[0], P[2] - P[0]))
                val = integrate.dblquad(lambda v, u: g(*(P[0] + u * (P[1] - P[0]) + v * (P[2] - P[0]))),
                                        0, 1, 0, lambda u: 1 - u, epsabs=1e-13, epsrel=1e-12)[0]
                return J * val

            area = over_tri(lambda x, y: 1.0)
            mean = over_tri(f) / area
            ref = over_tri(lambda x, y: (f(x, y) - mean) ** 2)
            assert err[t] == pytest.approx(ref, rel=1e-7, abs=1e-12)

    def test_smooth_corner_model_has_no_error(self):
        _, err = corner_model_errors(1.0, 2)
        assert np.abs(err).max() <= 1e-13

    def test_invalid_models(self):
        with pytest.raises(ValueError):
            SingularModel("edge", 0.5)
        with pytest.raises(ValueError):
            SingularModel("corner", 0.0)
        with pytest.raises(ValueError):
            SingularModel("vertex", 1.0)
        assert SingularModel("edge", 0.75).expected_rate == 0.25
        assert SingularModel("corner", 3.0).expected_rate == 1.0


class TestFitRate:
    def test_exact_power_law(self):
        h = np.array([1.0, 0.5, 0.25, 0.125])
        assert fit_rate(h, 3 * h**0.7) == pytest.approx(0.7, rel=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(c=st.floats(1e-6, 1e6), s=st.floats(1e-3, 1e3))
    def test_invariant_under_scaling(self, c, s):
        h = np.array([1.0, 0.5, 0.3, 0.1])
        e = np.array([2.0, 1.3, 0.9, 0.4])
        assert fit_rate(s * h, c * e) == pytest.approx(fit_rate(h, e), abs=1e-9)

    @pytest.mark.parametrize("sizes,errors", [
        ([1.0], [1.0]),
        ([1.0, 0.5], [1.0, 0.0]),
        ([1.0, 1.0], [1.0, 0.5]),
        ([1.0, 0.5], [1.0, np.nan]),
        ([1.0, 0.5, 0.2], [1.0, 0.5]),
    ])
    def test_degenerate(self, sizes, errors):
        with pytest.raises(DegenerateFitError):
            fit_rate(sizes, errors)

    def test_two_levels_are_not_a_rate(self):
        with pytest.raises(DegenerateFitError):
            best_approx_rate(SingularModel("edge", 1.5), [4, 8])
