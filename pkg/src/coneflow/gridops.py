"""Finite differences and quadrature on the uniform radial grid.

The grid truncates the real line at s_min < 0 < s_max.  Every background
profile approaches its pole value exponentially, f(s) ~ a + b*exp(-|s - end|),
so the end-node second derivative is closed with the exact relation for that
ansatz: f'' = b*e^s = (f_1 - f_0)/(e^h - 1) at the left end and symmetrically
at the right end.  The closure is linear in f and keeps the operators banded.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.integrate import simpson

from .errors import ParameterError


class DiffOps:
    """First/second s-derivative stencils for one RadialGrid."""

    def __init__(self, grid) -> None:
        self.n = grid.n
        self.h = grid.spacing
        # weight of the exponential end closure (f1-f0)/(e^h - 1)
        self._wend = 1.0 / math.expm1(self.h)

    def d1(self, f: np.ndarray) -> np.ndarray:
        """Centered first derivative, one-sided second order at the ends."""
        h, out = self.h, np.empty_like(f)
        out[1:-1] = (f[2:] - f[:-2]) / (2.0 * h)
        out[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h)
        out[-1] = (3.0 * f[-1] - 4.0 * f[-2] + f[-3]) / (2.0 * h)
        return out

    def d1_matrix_stencil(self, f: np.ndarray) -> np.ndarray:
        """First derivative with exactly the stencil encoded by d1_banded.

        Needed when a quantity must match the banded operator algebraically
        (end rows there are two-point first order).
        """
        h, out = self.h, np.empty_like(f)
        out[1:-1] = (f[2:] - f[:-2]) / (2.0 * h)
        out[0] = (f[1] - f[0]) / h
        out[-1] = (f[-1] - f[-2]) / h
        return out

    def d2(self, f: np.ndarray) -> np.ndarray:
        """Centered second derivative with the exponential end closure."""
        h, out = self.h, np.empty_like(f)
        out[1:-1] = (f[2:] - 2.0 * f[1:-1] + f[:-2]) / (h * h)
        out[0] = (f[1] - f[0]) * self._wend
        out[-1] = (f[-2] - f[-1]) * self._wend
        return out

    def d2_banded(self, coeff: np.ndarray) -> np.ndarray:
        """Banded matrix (scipy ab-format, l=u=1) of diag(coeff) @ D2."""
        n, h2 = self.n, self.h * self.h
        ab = np.zeros((3, n))
        ab[0, 2:] = coeff[1:-1] / h2          # superdiagonal entries (row i, col i+1)
        ab[1, 1:-1] = -2.0 * coeff[1:-1] / h2
        ab[2, :-2] = coeff[1:-1] / h2          # subdiagonal entries (row i, col i-1)
        w = self._wend
        ab[1, 0] = -coeff[0] * w
        ab[0, 1] = coeff[0] * w
        ab[1, -1] = -coeff[-1] * w
        ab[2, -2] = coeff[-1] * w
        return ab

    def d1_banded(self, coeff: float | np.ndarray) -> np.ndarray:
        """Banded matrix (l=u=1) of coeff * D1 with first-order closure at ends.

        The end rows use the two-point one-sided slope, which is first-order
        accurate; it only ever multiplies transport terms that vanish
        exponentially at the truncation, so the formal order is unaffected.
        """
        n, h = self.n, self.h
        c = np.broadcast_to(np.asarray(coeff, dtype=float), (n,))
        ab = np.zeros((3, n))
        ab[0, 2:] = c[1:-1] / (2.0 * h)
        ab[2, :-2] = -c[1:-1] / (2.0 * h)
        ab[1, 0] = -c[0] / h
        ab[0, 1] = c[0] / h
        ab[1, -1] = c[-1] / h
        ab[2, -2] = -c[-1] / h
        return ab


def quad_profile(values: np.ndarray, grid) -> float:
    """Composite-Simpson integral of a nodal profile over [s_min, s_max]."""
    return float(simpson(values, dx=grid.spacing))


def area_pairing(density: np.ndarray, f: np.ndarray, grid) -> float:
    """Surface integral of f against a current of the given s-density.

    Rotation-invariant reduction: integral over the surface equals
    2*pi * integral(density * f ds).
    """
    return 2.0 * math.pi * quad_profile(density * f, grid)


def window_mask(grid, lo: float, hi: float) -> np.ndarray:
    """Boolean node mask for the closed s-interval [lo, hi]."""
    if not (lo < hi):
        raise ParameterError(f"empty window [{lo}, {hi}]")
    s = grid.s
    return (s >= lo - 1e-12) & (s <= hi + 1e-12)


def interior_window(grid, margin: float) -> tuple[float, float]:
    """Default compact window [s_min + margin, s_max - margin]."""
    lo, hi = grid.s_min + margin, grid.s_max - margin
    if not (lo < hi):
        raise ParameterError(f"window margin {margin} leaves no interior nodes")
    return lo, hi
