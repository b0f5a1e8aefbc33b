import math

import numpy as np
import pytest

from tdbem.quadrature import TRIANGLE_7, collapsed_gauss, gauss_legendre, map_to_triangle


@pytest.mark.parametrize("n", [1, 3, 8])
def test_gauss_legendre_exactness(n):
    x, w = gauss_legendre(n)
    for k in range(2 * n):
        assert w @ x**k == pytest.approx(1.0 / (k + 1), rel=1e-13)


def _monomial_integral(a, b):
    # int over the unit triangle of s^a t^b, normalized by its area 1/2
    return 2.0 * math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)


@pytest.mark.parametrize("n", [2, 4, 6])
def test_collapsed_gauss_exactness(n):
    bary, w = collapsed_gauss(n)
    assert w.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(bary.sum(axis=1), 1.0)
    s, t = bary[:, 1], bary[:, 2]
    for a in range(2 * n - 1):
        for b in range(2 * n - 1 - a):
            assert w @ (s**a * t**b) == pytest.approx(_monomial_integral(a, b), rel=1e-12)


def test_seven_point_rule_degree_five():
    bary, w = TRIANGLE_7
    assert np.all(bary > 0)
    s, t = bary[:, 1], bary[:, 2]
    for a in range(6):
        for b in range(6 - a):
            assert w @ (s**a * t**b) == pytest.approx(_monomial_integral(a, b), rel=1e-12)


def test_map_to_triangle():
    corners = np.array([[0.0, 0, 0], [2, 0, 0], [0, 3, 1]])
    np.testing.assert_allclose(map_to_triangle(np.eye(3), corners), corners)
