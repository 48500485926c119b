import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from layerdecay.errors import InvalidArgumentError
from layerdecay.quadrature import collapsed_gauss, monomial_integral, quadrature


def test_midpoint_rule():
    rule = quadrature(1)
    assert rule.weights.shape == (1,)
    assert rule.weights[0] == pytest.approx(0.5)
    np.testing.assert_allclose(rule.points[0], [1 / 3, 1 / 3])


@pytest.mark.parametrize("deg", [1, 2, 3, 4, 5, 6])
def test_integral_of_x(deg):
    rule = quadrature(deg)
    assert rule.weights @ rule.points[:, 0] == pytest.approx(1 / 6, rel=1e-14)


@pytest.mark.parametrize("deg", [4, 5, 6])
def test_integral_of_x2y2(deg):
    rule = quadrature(deg)
    x, y = rule.points.T
    assert rule.weights @ (x ** 2 * y ** 2) == pytest.approx(1 / 180, rel=1e-12)


@pytest.mark.parametrize("deg", range(7))
def test_weights_positive_and_sum_to_half(deg):
    rule = quadrature(deg)
    assert np.all(rule.weights > 0)
    assert rule.weights.sum() == pytest.approx(0.5, rel=1e-14)
    assert np.allclose(rule.barycentric.sum(axis=1), 1.0)


@pytest.mark.parametrize("bad", [-1, 7, 12])
def test_unsupported_exactness(bad):
    with pytest.raises(InvalidArgumentError):
        quadrature(bad)


def test_monomial_integral_values():
    assert monomial_integral(0, 0) == 0.5
    assert monomial_integral(1, 0) == pytest.approx(1 / 6)
    assert monomial_integral(2, 2) == pytest.approx(1 / 180)


@given(a=st.integers(0, 6), b=st.integers(0, 6))
def test_shipped_rules_exact_on_monomials(a, b):
    if a + b > 6:
        return
    rule = quadrature(a + b)
    x, y = rule.points.T
    assert math.isclose(rule.weights @ (x ** a * y ** b), monomial_integral(a, b), rel_tol=1e-11)


@given(n=st.integers(1, 8), a=st.integers(0, 15), b=st.integers(0, 15))
def test_collapsed_gauss_exactness(n, a, b):
    if a + b > 2 * n - 2:
        return
    rule = collapsed_gauss(n)
    x, y = rule.points.T
    assert math.isclose(rule.weights @ (x ** a * y ** b), monomial_integral(a, b), rel_tol=1e-10)
