"""Symmetric quadrature rules on the reference triangle (0,0), (1,0), (0,1)."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import InvalidArgumentError


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    barycentric: np.ndarray  # (nq, 3)
    weights: np.ndarray      # (nq,), sum to 1/2
    degree: int

    @property
    def points(self) -> np.ndarray:
        """Reference coordinates (x, y) = (lambda_1, lambda_2)."""
        return self.barycentric[:, 1:]


def _orbit3(a, w):
    b = 1.0 - 2.0 * a
    return [(a, a, b), (a, b, a), (b, a, a)], [w] * 3


def _orbit6(a, b, w):
    c = 1.0 - a - b
    pts = [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]
    return pts, [w] * 6


def _assemble(*orbits):
    pts, wts = [], []
    for p, w in orbits:
        pts += p
        wts += w
    return np.array(pts), 0.5 * np.array(wts)


# Dunavant rules; weights normalised to 1 before the factor 1/2.
_RULES = {
    1: lambda: (np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([0.5])),
    2: lambda: _assemble(_orbit3(1 / 6, 1 / 3)),
    4: lambda: _assemble(
        _orbit3(0.445948490915965, 0.223381589678011),
        _orbit3(0.091576213509771, 0.109951743655322),
    ),
    6: lambda: _assemble(
        _orbit3(0.249286745170910, 0.116786275726379),
        _orbit3(0.063089014491502, 0.050844906370207),
        _orbit6(0.310352451033784, 0.053145049844817, 0.082851075618374),
    ),
}


def monomial_integral(a: int, b: int) -> float:
    """Exact integral of x**a * y**b over the reference triangle."""
    return math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)


def _verify(rule: QuadratureRule) -> None:
    x, y = rule.points[:, 0], rule.points[:, 1]
    if np.any(rule.weights <= 0):
        raise AssertionError("quadrature weights must be positive")
    for total in range(rule.degree + 1):
        for a in range(total + 1):
            b = total - a
            approx = rule.weights @ (x ** a * y ** b)
            if not math.isclose(approx, monomial_integral(a, b), rel_tol=1e-12, abs_tol=1e-14):
                raise AssertionError(f"rule of degree {rule.degree} fails on x^{a} y^{b}")


@lru_cache(maxsize=None)
def quadrature(exactness: int) -> QuadratureRule:
    """Smallest shipped rule integrating polynomials of degree ``exactness`` exactly."""
    if exactness < 0 or exactness > 6:
        raise InvalidArgumentError(f"no quadrature rule of exactness {exactness} (max 6)")
    degree = min(d for d in _RULES if d >= max(exactness, 1))
    bary, w = _RULES[degree]()
    rule = QuadratureRule(bary, w, degree)
    _verify(rule)
    return rule


@lru_cache(maxsize=None)
def collapsed_gauss(n: int) -> QuadratureRule:
    """Conical product Gauss rule, exact to total degree ``2n - 2``.

    The collapse Jacobian ``1 - x`` costs one degree of the ``2n - 1`` that
    the one-dimensional Gauss rule integrates exactly.

    Used for diagnostics that need higher exactness than the shipped rules.
    """
    g, w = np.polynomial.legendre.leggauss(n)
    t = 0.5 * (g + 1.0)
    wt = 0.5 * w
    U, V = np.meshgrid(t, t, indexing="ij")
    WU, WV = np.meshgrid(wt, wt, indexing="ij")
    x = U.ravel()
    y = (V * (1.0 - U)).ravel()
    weights = (WU * WV * (1.0 - U)).ravel()
    bary = np.column_stack([1.0 - x - y, x, y])
    return QuadratureRule(bary, weights, 2 * n - 2)
