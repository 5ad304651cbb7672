"""Quadrature rules on reference simplices.

Points are stored in barycentric coordinates, so a rule maps to any physical
simplex by ``x = bary @ vertices``. Weights sum to the measure of the
reference simplex (1 for the interval, 1/2 for the triangle, 1/6 for the
tetrahedron); :func:`physical_weights` rescales them to a physical cell.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import permutations
from math import factorial

import numpy as np
from scipy.special import roots_jacobi

__all__ = [
    "QuadratureRule",
    "UnsupportedDegree",
    "simplex_rule",
    "facet_rule",
    "reference_measure",
    "physical_weights",
]

MAX_DEGREE = 6


class UnsupportedDegree(ValueError):
    pass


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (nq, dim + 1) barycentric coordinates
    weights: np.ndarray  # (nq,)
    degree: int
    dim: int  # dimension of the simplex the rule lives on

    def __post_init__(self):
        self.points.setflags(write=False)
        self.weights.setflags(write=False)

    @property
    def npoints(self) -> int:
        return len(self.weights)

    def map(self, vertices: np.ndarray) -> np.ndarray:
        """Physical points for one simplex ``(dim+1, d)`` or a stack ``(n, dim+1, d)``."""
        return np.einsum("qa,...ad->...qd", self.points, vertices)


def reference_measure(dim: int) -> float:
    return 1.0 / factorial(dim)


def physical_weights(rule: QuadratureRule, measures: np.ndarray) -> np.ndarray:
    """Weights scaled to simplices of the given measures, shape ``(n, nq)``."""
    scale = np.asarray(measures, dtype=float) / reference_measure(rule.dim)
    return scale[..., None] * rule.weights


def _orbit(*coords):
    return sorted(set(permutations(coords)))


def _symmetric(orbits, dim):
    pts, wts = [], []
    for coords, w in orbits:
        for p in _orbit(*coords):
            pts.append(p)
            wts.append(w)
    pts = np.array(pts, dtype=float)
    wts = np.array(wts, dtype=float) * reference_measure(dim)
    return pts, wts


# Gauss-Legendre on [0, 1], stored as (t, 1 - t) pairs
def _interval(npts):
    x, w = np.polynomial.legendre.leggauss(npts)
    t = 0.5 * (x + 1.0)
    return np.column_stack([1.0 - t, t]), 0.5 * w


# Dunavant rules; weights normalised to sum to 1
_TRI_TABLES = {
    1: [((1 / 3, 1 / 3, 1 / 3), 1.0)],
    2: [((2 / 3, 1 / 6, 1 / 6), 1 / 3)],
    4: [
        ((0.108103018168070, 0.445948490915965, 0.445948490915965), 0.223381589678011),
        ((0.816847572980459, 0.091576213509771, 0.091576213509771), 0.109951743655322),
    ],
    5: [
        ((1 / 3, 1 / 3, 1 / 3), 0.225),
        ((0.059715871789770, 0.470142064105115, 0.470142064105115), 0.132394152788506),
        ((0.797426985353087, 0.101286507323456, 0.101286507323456), 0.125939180544827),
    ],
    6: [
        ((0.501426509658179, 0.249286745170910, 0.249286745170910), 0.116786275726379),
        ((0.873821971016996, 0.063089014491502, 0.063089014491502), 0.050844906370207),
        ((0.053145049844817, 0.310352451033784, 0.636502499121399), 0.082851075618374),
    ],
}
_TRI_TABLES[3] = _TRI_TABLES[4]

_TET_A2 = 0.1381966011250105  # (5 - sqrt(5)) / 20
_TET_TABLES = {
    1: [((0.25, 0.25, 0.25, 0.25), 1.0)],
    2: [((1 - 3 * _TET_A2, _TET_A2, _TET_A2, _TET_A2), 0.25)],
}


def _conical_tet(degree):
    """Collapsed Gauss-Jacobi product rule on the unit tetrahedron."""
    n = degree // 2 + 1
    x0, w0 = roots_jacobi(n, 2.0, 0.0)
    x1, w1 = roots_jacobi(n, 1.0, 0.0)
    x2, w2 = roots_jacobi(n, 0.0, 0.0)
    a, b, c = 0.5 * (x0 + 1), 0.5 * (x1 + 1), 0.5 * (x2 + 1)
    pts, wts = [], []
    for i in range(n):
        for j in range(n):
            for k in range(n):
                x = a[i]
                y = (1 - a[i]) * b[j]
                z = (1 - a[i]) * (1 - b[j]) * c[k]
                pts.append((1 - x - y - z, x, y, z))
                wts.append(w0[i] * w1[j] * w2[k] / 64.0)
    return np.array(pts), np.array(wts)


@lru_cache(maxsize=None)
def simplex_rule(dim: int, degree: int) -> QuadratureRule:
    """Rule on the reference interval (dim=1), triangle (2) or tetrahedron (3)."""
    if not 1 <= degree <= MAX_DEGREE:
        raise UnsupportedDegree(f"degree {degree} outside 1..{MAX_DEGREE}")
    if dim == 1:
        pts, wts = _interval(degree // 2 + 1)
    elif dim == 2:
        pts, wts = _symmetric(_TRI_TABLES[degree], 2)
    elif dim == 3:
        if degree in _TET_TABLES:
            pts, wts = _symmetric(_TET_TABLES[degree], 3)
        else:
            pts, wts = _conical_tet(degree)
    else:
        raise UnsupportedDegree(f"no rules for dimension {dim}")
    return QuadratureRule(pts, wts, degree, dim)


def facet_rule(dim: int, degree: int) -> QuadratureRule:
    """Rule on the facet of a ``dim``-simplex: interval in 2D, triangle in 3D."""
    if dim not in (2, 3):
        raise UnsupportedDegree(f"no facet rules for dimension {dim}")
    return simplex_rule(dim - 1, degree)
