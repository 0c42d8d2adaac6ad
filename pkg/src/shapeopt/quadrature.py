"""Quadrature rules on reference simplices.

Rules are returned as barycentric coordinates plus weights normalized to sum
to one, so integrating f over a physical cell is ``volume * sum(w_q *
f(x_q))``.  The default rules are exact for polynomials of degree five, which
covers every integrand assembled in this package (the benchmark loads are
degree-four polynomials multiplied by piecewise-linear fields).
"""
from __future__ import annotations

import math
from fractions import Fraction
from itertools import combinations_with_replacement

import numpy as np


def triangle_rule_degree5() -> tuple[np.ndarray, np.ndarray]:
    """Seven-point degree-5 rule on the triangle (barycentric, weights sum to 1)."""
    r = math.sqrt(15.0)
    b = (6.0 + r) / 21.0
    c = (6.0 - r) / 21.0
    wb = (155.0 + r) / 1200.0
    wc = (155.0 - r) / 1200.0
    third = 1.0 / 3.0
    points = np.array(
        [
            [third, third, third],
            [1.0 - 2.0 * b, b, b],
            [b, 1.0 - 2.0 * b, b],
            [b, b, 1.0 - 2.0 * b],
            [1.0 - 2.0 * c, c, c],
            [c, 1.0 - 2.0 * c, c],
            [c, c, 1.0 - 2.0 * c],
        ]
    )
    weights = np.array([9.0 / 40.0, wb, wb, wb, wc, wc, wc])
    return points, weights


def grundmann_moeller(dim: int, s: int) -> tuple[np.ndarray, np.ndarray]:
    """Grundmann-Moller rule of degree 2s+1 on the dim-simplex.

    Weights are computed exactly with rationals and normalized to sum to one.
    Some weights are negative; that is inherent to the family and harmless
    for the polynomial integrands used here.
    """
    n = dim
    d = 2 * s + 1
    points: list[list[Fraction]] = []
    weights: list[Fraction] = []
    for i in range(s + 1):
        denom = d + n - 2 * i
        coeff = (
            Fraction(-1) ** i
            * Fraction(denom) ** d
            / (Fraction(2) ** (2 * s) * math.factorial(i) * math.factorial(d + n - i))
        )
        # enumerate beta >= 0 with |beta| = s - i over n+1 slots
        for combo in combinations_with_replacement(range(n + 1), s - i):
            beta = [0] * (n + 1)
            for slot in combo:
                beta[slot] += 1
            points.append([Fraction(2 * bk + 1, denom) for bk in beta])
            weights.append(coeff)
    w = np.array([float(x * math.factorial(n)) for x in weights])
    pts = np.array([[float(c) for c in row] for row in points])
    return pts, w


def tetrahedron_rule_degree5() -> tuple[np.ndarray, np.ndarray]:
    """Fifteen-point degree-5 rule on the tetrahedron (Grundmann-Moller s=2)."""
    return grundmann_moeller(3, 2)


def simplex_rule(dim: int, degree: int = 5) -> tuple[np.ndarray, np.ndarray]:
    """Barycentric points and weights for a rule of at least ``degree`` on the dim-simplex."""
    if dim == 2 and degree <= 5:
        return triangle_rule_degree5()
    if dim == 3 and degree <= 5:
        return tetrahedron_rule_degree5()
    if dim in (2, 3):
        return grundmann_moeller(dim, degree // 2)  # degree 2*(d//2)+1 >= d
    raise ValueError(f"unsupported simplex dimension {dim}")


def oracle_rule(dim: int, degree: int = 11) -> tuple[np.ndarray, np.ndarray]:
    """High-order over-integration rule used only for cross-checks."""
    return grundmann_moeller(dim, max(degree // 2, 5))


def physical_points(bary: np.ndarray, cell_vertices: np.ndarray) -> np.ndarray:
    """Map barycentric points to physical coordinates.

    Parameters
    ----------
    bary : (nq, d+1) barycentric coordinates.
    cell_vertices : (..., d+1, d) vertex coordinates per cell.

    Returns
    -------
    (..., nq, d) physical quadrature points.
    """
    return np.einsum("qi,...id->...qd", bary, cell_vertices)
