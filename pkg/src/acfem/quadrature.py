"""Quadrature rules on the reference triangle and on time slabs.

The triangle catalogue carries symmetric rules of exactness degree 2, 4, 6
and 10 (Dunavant).  Weights are normalized so that

    integral over tau of f  ~=  area(tau) * sum_q w_q f(x_q),

i.e. they sum to one.  Estimator integrands involving the cubic
nonlinearity raised to p-th powers exceed degree 10; the degree-10 rule is
used for those with the resulting percent-level quadrature error accepted.
"""
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class QuadRule:
    """A symmetric quadrature rule in barycentric coordinates."""

    bary: np.ndarray      # (nq, 3)
    weights: np.ndarray   # (nq,), sums to 1
    degree: int           # all polynomials up to this degree are exact

    @property
    def npoints(self):
        return self.weights.shape[0]


def _sym3(a):
    # the three permutations of (a, b, b) with b = (1-a)/2
    b = 0.5 * (1.0 - a)
    return [(a, b, b), (b, a, b), (b, b, a)]


def _sym6(a, b):
    c = 1.0 - a - b
    return [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]


def _rule(points_weights, degree):
    pts = []
    wts = []
    for group, w in points_weights:
        for p in group:
            pts.append(p)
            wts.append(w)
    bary = np.array(pts, dtype=float)
    weights = np.array(wts, dtype=float)
    bary.setflags(write=False)
    weights.setflags(write=False)
    return QuadRule(bary=bary, weights=weights, degree=degree)


# Degree 2: edge midpoints.
_D2 = _rule([(_sym3(0.0), 1.0 / 3.0)], degree=2)

# Degree 4: Dunavant 4 (6 points).
_D4 = _rule(
    [
        (_sym3(0.816847572980459), 0.109951743655322),
        (_sym3(0.108103018168070), 0.223381589678011),
    ],
    degree=4,
)

# Degree 6: Dunavant 6 (12 points).
_D6 = _rule(
    [
        (_sym3(0.873821971016996), 0.050844906370207),
        (_sym3(0.501426509658179), 0.116786275726379),
        (_sym6(0.636502499121399, 0.310352451033785), 0.082851075618374),
    ],
    degree=6,
)

# Degree 10: Dunavant 10 (25 points).
_D10 = _rule(
    [
        ([(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)], 0.090817990382754),
        (_sym3(0.028844733232685), 0.036725957756467),
        (_sym3(0.781036849029926), 0.045321059435528),
        (_sym6(0.141707219414880, 0.307939838764121), 0.072757916845420),
        (_sym6(0.025003534762686, 0.246672560639903), 0.028327242531057),
        (_sym6(0.009540815400299, 0.066803251012200), 0.009421666963733),
    ],
    degree=10,
)

TRI_RULES = {2: _D2, 4: _D4, 6: _D6, 10: _D10}


def tri_rule(degree):
    """Smallest catalogue rule exact for polynomials of the given degree."""
    for d in sorted(TRI_RULES):
        if d >= degree:
            return TRI_RULES[d]
    return TRI_RULES[10]


def gauss_on_interval(a, b, npoints):
    """Gauss-Legendre points/weights on [a, b] (exact to degree 2n-1)."""
    x, w = np.polynomial.legendre.leggauss(npoints)
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    return mid + half * x, half * w
