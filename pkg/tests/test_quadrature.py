"""Exactness of the triangle quadrature catalogue."""
import math
from fractions import Fraction

import numpy as np
import pytest

from acfem.quadrature import TRI_RULES, gauss_on_interval, tri_rule


def reference_monomial_integral(a, b):
    # exact integral of x^a y^b over the unit reference triangle
    return Fraction(math.factorial(a) * math.factorial(b),
                    math.factorial(a + b + 2))


@pytest.mark.parametrize("degree", sorted(TRI_RULES))
def test_weights_sum_to_one(degree):
    rule = TRI_RULES[degree]
    assert abs(rule.weights.sum() - 1.0) < 1e-13
    assert np.all(rule.bary >= -1e-14)
    assert np.allclose(rule.bary.sum(axis=1), 1.0, atol=1e-13)


@pytest.mark.parametrize("degree", sorted(TRI_RULES))
def test_monomial_exactness(degree):
    rule = TRI_RULES[degree]
    # reference triangle (0,0), (1,0), (0,1): x = bary_1, y = bary_2
    x = rule.bary[:, 1]
    y = rule.bary[:, 2]
    area = 0.5
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            approx = area * float(np.sum(rule.weights * x ** a * y ** b))
            exact = float(reference_monomial_integral(a, b))
            assert approx == pytest.approx(exact, abs=4e-15, rel=1e-12), \
                f"monomial x^{a} y^{b} at degree {degree}"


def test_rule_lookup_picks_smallest_sufficient():
    assert tri_rule(1).degree == 2
    assert tri_rule(3).degree == 4
    assert tri_rule(5).degree == 6
    assert tri_rule(7).degree == 10
    assert tri_rule(99).degree == 10


def test_gauss_interval_exactness():
    x, w = gauss_on_interval(0.25, 0.75, 4)
    for deg in range(8):  # 4 points: exact to degree 7
        approx = float(np.sum(w * x ** deg))
        exact = (0.75 ** (deg + 1) - 0.25 ** (deg + 1)) / (deg + 1)
        assert approx == pytest.approx(exact, rel=1e-13)
