"""Closed-form reference eigenpairs for constant convection.

With constant ``b`` the substitution ``u = exp(b.x/2) w`` turns
``-Lap u + b.grad u = lambda u`` into ``-Lap w + |b|^2/4 w = lambda w``, so
every Dirichlet-Laplace eigenvalue shifts by ``|b|^2/4``.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import integrate

# First Dirichlet eigenvalue of the L-shaped domain with side length 2
# ((-1,1)^2 minus a quadrant, or equivalently (0,2)^2 minus [1,2]^2).
LSHAPE_LAPLACE_LAMBDA1 = 9.6397238440219
# The 8th (double) eigenvalue of the same domain is inherited from the unit square.
LSHAPE_LAPLACE_LAMBDA8 = 5.0 * math.pi ** 2


def square_eigenvalue(b, i: int = 1, j: int = 1) -> float:
    b = np.asarray(b, dtype=float)
    return float(b @ b / 4.0 + math.pi ** 2 * (i * i + j * j))


def square_eigenvalue_by_index(b, k: int) -> float:
    """k-th eigenvalue (1-based, with multiplicity) on the unit square."""
    pairs = sorted((i * i + j * j) for i in range(1, k + 2) for j in range(1, k + 2))
    return square_eigenvalue(b) - 2.0 * math.pi ** 2 + math.pi ** 2 * pairs[k - 1]


def lshape_reference(b, k: int) -> float | None:
    """Reference eigenvalue on the L-shape for k in {1, 8}; None otherwise."""
    shift = float(np.dot(b, b)) / 4.0
    if k == 1:
        return LSHAPE_LAPLACE_LAMBDA1 + shift
    if k == 8:
        return LSHAPE_LAPLACE_LAMBDA8 + shift
    return None


class SquareEigenfunction:
    """``exp(b.x/2) sin(i pi x) sin(j pi y)`` on the unit square, L2-normalized."""

    def __init__(self, b, i: int = 1, j: int = 1):
        self.b = np.asarray(b, dtype=float).reshape(2)
        self.i, self.j = i, j
        self.eigenvalue = square_eigenvalue(self.b, i, j)
        bx, by = self.b
        nx, _ = integrate.quad(lambda x: math.exp(bx * x) * math.sin(i * math.pi * x) ** 2, 0.0, 1.0,
                               epsabs=0.0, epsrel=1e-13)
        ny, _ = integrate.quad(lambda y: math.exp(by * y) * math.sin(j * math.pi * y) ** 2, 0.0, 1.0,
                               epsabs=0.0, epsrel=1e-13)
        self.scale = 1.0 / math.sqrt(nx * ny)

    def _parts(self, p):
        p = np.atleast_2d(p)
        x, y = p[:, 0], p[:, 1]
        ax, ay = self.i * math.pi, self.j * math.pi
        e = self.scale * np.exp(0.5 * (self.b[0] * x + self.b[1] * y))
        return x, y, ax, ay, e

    def value(self, p):
        x, y, ax, ay, e = self._parts(p)
        return e * np.sin(ax * x) * np.sin(ay * y)

    def gradient(self, p):
        x, y, ax, ay, e = self._parts(p)
        sx, cx, sy, cy = np.sin(ax * x), np.cos(ax * x), np.sin(ay * y), np.cos(ay * y)
        gx = e * (0.5 * self.b[0] * sx + ax * cx) * sy
        gy = e * sx * (0.5 * self.b[1] * sy + ay * cy)
        return np.column_stack([gx, gy])

    def laplacian(self, p):
        x, y, ax, ay, e = self._parts(p)
        sx, cx, sy, cy = np.sin(ax * x), np.cos(ax * x), np.sin(ay * y), np.cos(ay * y)
        bx, by = 0.5 * self.b
        fxx = (bx * bx - ax * ax) * sx + 2 * bx * ax * cx
        fyy = (by * by - ay * ay) * sy + 2 * by * ay * cy
        return e * (fxx * sy + sx * fyy)
