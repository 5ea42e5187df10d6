"""Shared numerical helpers: overflow-safe hyperbolic ratios, quadrature,
piecewise Chebyshev antiderivatives and fixed-order Gauss-Legendre rules.

All cosh/sinh ratios are evaluated through exponential-difference forms so
that arguments up to ~700 stay finite even though the individual cosh/sinh
would overflow.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import chebyshev as _cheb
from scipy.integrate import quad as _scipy_quad

QUAD_ABS_TOL = 1e-12


def cosh_ratio(x: float, y: float) -> float:
    """cosh(x)/cosh(y) for x, y >= 0 without overflow (requires x <= y + 700)."""
    return math.exp(x - y) * (1.0 + math.exp(-2.0 * x)) / (1.0 + math.exp(-2.0 * y))


def sinh_over_cosh(x: float, y: float) -> float:
    """sinh(x)/cosh(y) for x, y >= 0 without overflow."""
    return math.exp(x - y) * (1.0 - math.exp(-2.0 * x)) / (1.0 + math.exp(-2.0 * y))


def sinh_ratio(x: float, y: float) -> float:
    """sinh(x)/sinh(y) for 0 <= x, y > 0 without overflow."""
    if x == 0.0:
        return 0.0
    return math.exp(x - y) * (1.0 - math.exp(-2.0 * x)) / (1.0 - math.exp(-2.0 * y))


def quad(f: Callable[[float], float], a: float, b: float,
         breakpoints: Sequence[float] | None = None) -> float:
    """Adaptive Gauss-Kronrod quadrature of f on [a, b] to ~1e-12 absolute.

    ``breakpoints`` marks interior kinks (values outside (a, b) are ignored).
    """
    if b <= a:
        return 0.0
    pts = None
    if breakpoints:
        pts = [p for p in breakpoints if a < p < b]
        pts = pts or None
    val, _ = _scipy_quad(f, a, b, points=pts, epsabs=QUAD_ABS_TOL,
                         epsrel=QUAD_ABS_TOL, limit=200)
    return val


class PiecewiseAntiderivative:
    """F(x) = int_lo^x f(u) du built from per-piece Chebyshev interpolants.

    The integrand must be smooth inside each piece; kinks go on piece
    boundaries. Interpolation degree should be generous: for analytic f the
    coefficients decay geometrically, so the result is quadrature-grade
    (well below 1e-12 absolute for the degrees used here).
    """

    def __init__(self, f: Callable[[np.ndarray], np.ndarray],
                 knots: Sequence[float], degree: int):
        knots = [float(k) for k in knots]
        if sorted(knots) != knots:
            raise ValueError("knots must be nondecreasing")
        self.lo = knots[0]
        self.hi = knots[-1]
        self._bounds = []
        self._pieces = []
        self._scalar_pieces = []
        offset = 0.0
        for a, b in zip(knots[:-1], knots[1:]):
            if b <= a:
                continue
            interp = _cheb.Chebyshev.interpolate(f, degree, domain=[a, b])
            anti = interp.integ(lbnd=a)
            self._bounds.append((a, b))
            self._pieces.append((anti, offset))
            self._scalar_pieces.append((a, b, anti.coef, offset))
            offset += float(anti(b))
        self._total = offset

    def __call__(self, x):
        if np.isscalar(x) or getattr(x, "ndim", -1) == 0:
            return self._scalar(float(x))
        x_arr = np.asarray(x, dtype=float)
        out = np.empty_like(x_arr)
        done = np.zeros(x_arr.shape, dtype=bool)
        for (a, b), (anti, offset) in zip(self._bounds, self._pieces):
            sel = (~done) & (x_arr <= b + 1e-14)
            if np.any(sel):
                out[sel] = offset + anti(np.clip(x_arr[sel], a, b))
                done |= sel
        out[~done] = self._total
        return out

    def _scalar(self, x: float) -> float:
        for a, b, coef, offset in self._scalar_pieces:
            if x <= b + 1e-14:
                clipped = min(max(x, a), b)
                mapped = (2.0 * clipped - (a + b)) / (b - a)
                return offset + float(_cheb.chebval(mapped, coef))
        return self._total


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


def gauss_nodes(a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
    """8-point Gauss-Legendre nodes and weights on [a, b]."""
    half = 0.5 * (b - a)
    return a + half * (_GL_NODES + 1.0), half * _GL_WEIGHTS


def gauss_panel_nodes(edges: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes/weights for every panel [edges[i], edges[i+1]].

    Returns arrays of shape (n_panels, 8).
    """
    a = edges[:-1][:, None]
    half = 0.5 * np.diff(edges)[:, None]
    return a + half * (_GL_NODES[None, :] + 1.0), half * _GL_WEIGHTS[None, :]
