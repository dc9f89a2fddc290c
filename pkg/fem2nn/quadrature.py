from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from .errors import StudyError


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Points and weights on the reference simplex {x >= 0, sum(x) <= 1}."""

    points: np.ndarray
    weights: np.ndarray
    order: int

    @property
    def dim(self) -> int:
        return int(self.points.shape[1])

    def integrate(self, f) -> float:
        return float(np.dot(self.weights, f(self.points)))


def _unit_interval(n: int, alpha: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss rule on [0, 1] for the weight (1 - s)^alpha."""
    if alpha == 0:
        x, w = roots_legendre(n)
    else:
        x, w = roots_jacobi(n, alpha, 0)
    return (1.0 + x) / 2.0, w / 2.0 ** (alpha + 1)


@lru_cache(maxsize=None)
def gauss_simplex(order: int, dim: int = 2) -> QuadratureRule:
    """
    Collapsed-coordinate (Duffy) tensor Gauss-Jacobi rule, exact for polynomials of
    total degree <= order.
    """
    if order < 1:
        raise StudyError(f"quadrature order must be >= 1, got {order}")
    if dim not in (2, 3):
        raise StudyError(f"quadrature implemented for d = 2 and 3, got {dim}")
    n = math.ceil((order + 1) / 2)
    a, wa = _unit_interval(n, 0)
    b, wb = _unit_interval(n, 1)
    if dim == 2:
        A, B = np.meshgrid(a, b, indexing="ij")
        points = np.column_stack([(A * (1.0 - B)).ravel(), B.ravel()])
        weights = np.outer(wa, wb).ravel()
    else:
        c, wc = _unit_interval(n, 2)
        A, B, C = np.meshgrid(a, b, c, indexing="ij")
        points = np.column_stack(
            [(A * (1.0 - B) * (1.0 - C)).ravel(), (B * (1.0 - C)).ravel(), C.ravel()]
        )
        weights = np.einsum("i,j,k->ijk", wa, wb, wc).ravel()
    points.flags.writeable = False
    weights.flags.writeable = False
    return QuadratureRule(points=points, weights=weights, order=order)


def simplex_monomial_integral(exponents: Sequence[int]) -> float:
    """Exact integral of prod x_k^{a_k} over the reference simplex."""
    num = math.prod(math.factorial(a) for a in exponents)
    return num / math.factorial(sum(exponents) + len(exponents))


def map_rule(rule: QuadratureRule, simplices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Physical points (c, q, d) and weights (c, q) for a stack of simplices (c, d+1, d).
    """
    x0 = simplices[:, 0, :]
    B = np.transpose(simplices[:, 1:, :] - x0[:, None, :], (0, 2, 1))
    points = x0[:, None, :] + np.einsum("cij,qj->cqi", B, rule.points)
    weights = np.abs(np.linalg.det(B))[:, None] * rule.weights[None, :]
    return points, weights
