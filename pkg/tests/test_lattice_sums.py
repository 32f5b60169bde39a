import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import gamma, zeta

from brwlab.lattice_sums import lattice_zeta, power_law_symbol


def polylog_symbol_1d(theta: float, s: float) -> float:
    """sum_{k != 0} (cos(k theta) - 1) / |k|^s via the polylogarithm."""
    li = mpmath.polylog(s, mpmath.exp(1j * theta))
    return float(2 * (mpmath.re(li) - mpmath.zeta(s)))


def series_symbol_1d(theta: float, s: float, terms: int = 30) -> float:
    """Small-theta expansion: Gamma(1-s) cos(pi(s-1)/2) |theta|^(s-1) + sum zeta(s-2k) (-1)^k theta^2k / (2k)!."""
    out = gamma(1 - s) * math.cos(math.pi * (s - 1) / 2) * abs(theta) ** (s - 1)
    for k in range(1, terms):
        out += float(mpmath.zeta(s - 2 * k)) * (-1) ** k * theta ** (2 * k) / math.factorial(2 * k)
    return 2 * out


@pytest.mark.parametrize("s", [1.5, 2.2, 3.0])
def test_lattice_zeta_1d_is_twice_riemann(s):
    assert lattice_zeta(1, s) == pytest.approx(2 * zeta(s), rel=1e-11)


def test_lattice_zeta_2d_matches_dirichlet_beta_product():
    beta = float(mpmath.nsum(lambda k: (-1) ** k / (2 * k + 1) ** 1.5, [0, mpmath.inf]))
    assert lattice_zeta(2, 3.0) == pytest.approx(4 * zeta(1.5) * beta, rel=1e-10)


def test_lattice_zeta_3d_against_direct_sum_with_tail():
    R = 40
    g = np.arange(-R, R + 1)
    x, y, z = np.meshgrid(g, g, g, indexing="ij")
    r2 = (x**2 + y**2 + z**2).astype(float)
    s = 4.0
    mask = (r2 > 0) & (r2 <= R * R)
    direct = np.sum(r2[mask] ** (-s / 2))
    tail = 4 * math.pi * R ** (3 - s) / (s - 3)  # integral estimate of the rest
    assert lattice_zeta(3, s) == pytest.approx(direct + tail, rel=2e-3)


@pytest.mark.parametrize("alpha", [0.5, 1.0, 1.5])
@pytest.mark.parametrize("theta", [1e-3, 0.1, 1.0, 2.5, math.pi])
def test_symbol_1d_matches_polylog(alpha, theta):
    got = float(power_law_symbol(np.array([[theta]]), 1, alpha)[0])
    assert got == pytest.approx(polylog_symbol_1d(theta, 1 + alpha), rel=1e-10, abs=1e-13)


@pytest.mark.parametrize("alpha", [0.5, 1.3])
def test_symbol_1d_matches_small_theta_series(alpha):
    theta = 0.05
    got = float(power_law_symbol(np.array([[theta]]), 1, alpha)[0])
    assert got == pytest.approx(series_symbol_1d(theta, 1 + alpha), rel=1e-10)


@settings(max_examples=40, deadline=None)
@given(
    d=st.integers(1, 3),
    alpha=st.floats(0.2, 1.9),
    theta=st.lists(st.floats(-math.pi, math.pi), min_size=3, max_size=3),
)
def test_symbol_is_even_nonpositive(d, alpha, theta):
    th = np.array([theta[:d]])
    a = float(power_law_symbol(th, d, alpha)[0])
    b = float(power_law_symbol(-th, d, alpha)[0])
    assert a <= 0.0
    assert a == pytest.approx(b, rel=1e-12, abs=1e-15)


def test_symbol_vanishes_at_zero():
    for d in (1, 2, 3):
        assert abs(float(power_law_symbol(np.zeros((1, d)), d, 0.7)[0])) < 1e-12
