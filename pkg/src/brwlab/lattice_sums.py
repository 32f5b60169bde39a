"""Exact lattice sums for power-law jump kernels.

Both sums are computed from the Mellin representation

    |z|^{-s} = Gamma(s/2)^{-1} * int_0^inf t^{s/2-1} exp(-t |z|^2) dt,

which turns a sum over Z^d into a one-dimensional integral of products of
Jacobi theta functions.  Small t uses the Poisson-resummed form, large t the
direct series, and the only non-smooth piece (the |theta|^alpha cusp of the
symbol) is integrated in closed form with incomplete gamma functions.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import gamma, gammaincc

# split point of the Mellin integral
_T_SPLIT = 1.0
_IMAGES = np.arange(-3, 4)           # Poisson images kept for t <= _T_SPLIT
_TERMS = np.arange(1, 8)             # direct theta terms kept for t >= _T_SPLIT

_GL_X, _GL_W = np.polynomial.legendre.leggauss(48)
_GL_T = 0.5 * _T_SPLIT * (_GL_X + 1.0)
_GL_W = 0.5 * _T_SPLIT * _GL_W
_LAG_X, _LAG_W = np.polynomial.laguerre.laggauss(48)


def _theta_direct(theta, t):
    """sum_n exp(-t n^2) cos(n theta); theta (...,), t (T,) -> (..., T)."""
    theta = np.asarray(theta, dtype=float)[..., None, None]
    e = np.exp(-np.multiply.outer(t, _TERMS**2))            # (T, N)
    return 1.0 + 2.0 * np.sum(e * np.cos(theta * _TERMS), axis=-1)


def _theta_images(theta, t):
    """sum_m exp(-(theta - 2 pi m)^2 / 4t), i.e. theta_3 without sqrt(pi/t)."""
    theta = np.asarray(theta, dtype=float)[..., None, None]
    shifted = theta - 2.0 * np.pi * _IMAGES
    return np.sum(np.exp(-shifted**2 / (4.0 * t[:, None])), axis=-1)


def lattice_zeta(d: int, s: float) -> float:
    """Epstein zeta sum over Z^d \\ {0} of |z|^{-s}, for s > d."""
    if s <= d:
        raise ValueError("lattice_zeta needs s > d")
    a = 0.5 * (s - d)
    h = 0.5 * s
    ts = _T_SPLIT
    # small t: (pi/t)^{d/2} Theta(0,t)^d - 1, with the leading part analytic
    lead = math.pi ** (0.5 * d) * ts**a / a - ts**h / h
    th0 = _theta_images(np.zeros(1), _GL_T)[0]
    rem = np.sum(_GL_W * _GL_T ** (h - 1) * (math.pi / _GL_T) ** (0.5 * d) * (th0**d - 1.0))
    # large t: direct series
    t = ts + _LAG_X
    big = np.sum(_LAG_W * np.exp(_LAG_X) * t ** (h - 1) * (_theta_direct(np.zeros(1), t)[0] ** d - 1.0))
    return float((lead + rem + big) / gamma(h))


def _cusp_integral(b, a, ts):
    """int_0^ts t^{a-1} (exp(-b/t) - 1) dt for b >= 0, 0 < a < 1."""
    b = np.asarray(b, dtype=float)
    x = b / ts
    out = -np.expm1(-x) * -(ts**a)
    with np.errstate(divide="ignore", invalid="ignore"):
        inc = np.where(b > 0, b**a * gammaincc(1.0 - a, x) * gamma(1.0 - a), 0.0)
    return (out - inc) / a


def power_law_symbol(theta, d: int, alpha: float) -> np.ndarray:
    """sum_{z != 0} |z|^{-(d+alpha)} (cos(theta.z) - 1) for theta in [-pi, pi]^d.

    ``theta`` has shape (..., d).  The result is <= 0 and behaves like
    -const * |theta|^alpha near the origin.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] != d:
        raise ValueError(f"theta must have trailing dimension {d}")
    s = d + alpha
    h = 0.5 * s
    a = 0.5 * alpha
    # fold into [-pi, pi] so the Poisson images are the nearest ones
    theta = np.remainder(theta + np.pi, 2.0 * np.pi) - np.pi
    k2 = np.sum(theta**2, axis=-1)

    lead = math.pi ** (0.5 * d) * _cusp_integral(0.25 * k2, a, _T_SPLIT)

    # smooth image remainder for t in (0, ts)
    prod = np.ones(theta.shape[:-1] + (_GL_T.size,))
    for i in range(d):
        prod *= _theta_images(theta[..., i], _GL_T)
    th0 = _theta_images(np.zeros(1), _GL_T)[0]
    rem_int = prod - np.exp(-k2[..., None] / (4.0 * _GL_T)) - (th0**d - 1.0)
    rem = np.sum(_GL_W * _GL_T ** (h - 1) * (math.pi / _GL_T) ** (0.5 * d) * rem_int, axis=-1)

    t = _T_SPLIT + _LAG_X
    prod = np.ones(theta.shape[:-1] + (t.size,))
    for i in range(d):
        prod *= _theta_direct(theta[..., i], t)
    diff = prod - _theta_direct(np.zeros(1), t)[0] ** d
    big = np.sum(_LAG_W * np.exp(_LAG_X) * t ** (h - 1) * diff, axis=-1)

    out = (lead + rem + big) / gamma(h)
    return np.minimum(out, 0.0)
