"""Benchmark problem data: the source term f with its gradient and Hessian.

The objective is the integral of the state u solving -laplace(u) = f with
homogeneous Dirichlet conditions; everything about a concrete run that is not
mesh or solver configuration lives in :class:`ProblemData`.  Derivatives are
analytic; tests cross-check them against finite differences.
"""
from __future__ import annotations

import dataclasses
from typing import Callable

import numpy as np

Scalar = Callable[[np.ndarray], np.ndarray]
Vector = Callable[[np.ndarray], np.ndarray]
Matrix = Callable[[np.ndarray], np.ndarray]


@dataclasses.dataclass(frozen=True)
class ProblemData:
    """Source term of the state equation with analytic derivatives.

    ``f`` maps points of shape (..., dim) to values (...); ``grad_f`` to
    (..., dim); ``hess_f`` to (..., dim, dim).  The Hessian feeds the exact
    second shape derivative of the pulled-back Lagrangian.
    """

    dim: int
    f: Scalar
    grad_f: Vector
    hess_f: Matrix
    name: str = "custom"

    def __post_init__(self) -> None:
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")


def _f2(points: np.ndarray) -> np.ndarray:
    x, y = points[..., 0], points[..., 1]
    q = x + 0.4 - y**2
    return 2.5 * q**2 + x**2 + y**2 - 1.0


def _grad_f2(points: np.ndarray) -> np.ndarray:
    x, y = points[..., 0], points[..., 1]
    q = x + 0.4 - y**2
    return np.stack((5.0 * q + 2.0 * x, -10.0 * y * q + 2.0 * y), axis=-1)


def _hess_f2(points: np.ndarray) -> np.ndarray:
    x, y = points[..., 0], points[..., 1]
    q = x + 0.4 - y**2
    h = np.empty(points.shape[:-1] + (2, 2))
    h[..., 0, 0] = 7.0
    h[..., 0, 1] = h[..., 1, 0] = -10.0 * y
    h[..., 1, 1] = -10.0 * q + 20.0 * y**2 + 2.0
    return h


def _f3(points: np.ndarray) -> np.ndarray:
    return _f2(points[..., :2]) + points[..., 2] ** 2


def _grad_f3(points: np.ndarray) -> np.ndarray:
    g2 = _grad_f2(points[..., :2])
    return np.concatenate((g2, 2.0 * points[..., 2:3]), axis=-1)


def _hess_f3(points: np.ndarray) -> np.ndarray:
    h = np.zeros(points.shape[:-1] + (3, 3))
    h[..., :2, :2] = _hess_f2(points[..., :2])
    h[..., 2, 2] = 2.0
    return h


def benchmark_load_2d() -> ProblemData:
    """Planar benchmark load 2.5(x + 0.4 - y^2)^2 + x^2 + y^2 - 1."""
    return ProblemData(2, _f2, _grad_f2, _hess_f2, name="benchmark-2d")


def benchmark_load_3d() -> ProblemData:
    """Spatial benchmark load: the planar one plus z^2."""
    return ProblemData(3, _f3, _grad_f3, _hess_f3, name="benchmark-3d")
