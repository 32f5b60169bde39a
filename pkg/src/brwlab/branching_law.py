"""Offspring intensities at the source and the moment-hierarchy source term."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np

from .errors import ArityMismatch, ConfigError, NegativeIntensity

N_MAX_DEFAULT = 10
G_ORDER_DEFAULT = 6


def falling_factorial(n: int, r: int) -> int:
    out = 1
    for k in range(r):
        out *= n - k
    return out


@lru_cache(maxsize=None)
def compositions(n: int, r: int) -> tuple:
    """All ordered tuples of r positive integers summing to n."""
    if r == 1:
        return ((n,),)
    out = []
    for first in range(1, n - r + 2):
        for rest in compositions(n - first, r - 1):
            out.append((first,) + rest)
    return tuple(out)


@lru_cache(maxsize=None)
def _partition_table(n: int, r: int) -> tuple:
    """Multisets {i_1..i_r} (as sorted tuples) with their ordered-composition weight
    n!/(i_1!...i_r!) * (number of distinct orderings)."""
    table = {}
    for comp in compositions(n, r):
        key = tuple(sorted(comp))
        table[key] = table.get(key, 0) + 1
    out = []
    for key, count in sorted(table.items()):
        multinom = math.factorial(n)
        for i in key:
            multinom //= math.factorial(i)
        out.append((key, multinom * count))
    return tuple(out)


@dataclass(frozen=True)
class OffspringLaw:
    """Intensities b_n at the source; b_0 is also the death rate everywhere else.

    ``b`` holds b_0 and b_n for n >= 2; b_1 is implied by sum_n b_n = 0.
    """

    b: tuple  # (b_0, b_1, b_2, ..., b_Nmax), b_1 filled in
    g_order: int = G_ORDER_DEFAULT

    @property
    def death_rate(self) -> float:
        return self.b[0]

    @property
    def n_max(self) -> int:
        return len(self.b) - 1

    def intensity(self, n: int) -> float:
        return self.b[n] if 0 <= n < len(self.b) else 0.0

    @property
    def branching_rate(self) -> float:
        """Total rate of branching events at the source, sum_{n>=2} b_n."""
        return math.fsum(self.b[2:])

    def f(self, u: float) -> float:
        """Infinitesimal generating function f(u) = sum_n b_n u^n."""
        return float(np.polynomial.polynomial.polyval(u, self.b))


def offspring_law(b: Mapping, n_max: int = N_MAX_DEFAULT, g_order: int = G_ORDER_DEFAULT) -> OffspringLaw:
    """Build a law from ``{n: b_n}`` (keys may be strings, b_1 must be absent or consistent)."""
    vals = {}
    for key, v in b.items():
        n = int(key)
        v = float(v)
        if n < 0:
            raise ConfigError(f"offspring index {n} < 0")
        if n != 1 and v < 0:
            raise NegativeIntensity(f"b_{n} = {v} < 0")
        vals[n] = v
    top = max([n_max] + list(vals))
    coeffs = [0.0] * (top + 1)
    for n, v in vals.items():
        if n != 1:
            coeffs[n] = v
    coeffs[1] = -math.fsum(c for n, c in enumerate(coeffs) if n != 1)
    if 1 in vals and not math.isclose(vals[1], coeffs[1], rel_tol=1e-12, abs_tol=1e-15):
        raise ConfigError(f"b_1 = {vals[1]} inconsistent with sum b_n = 0 (expected {coeffs[1]})")
    while len(coeffs) > 2 and coeffs[-1] == 0.0:
        coeffs.pop()
    return OffspringLaw(b=tuple(coeffs), g_order=g_order)


def beta_star(law: OffspringLaw) -> float:
    """sum_{n>1} (n - 1) b_n."""
    return math.fsum((n - 1) * bn for n, bn in enumerate(law.b) if n > 1)


def factorial_moment(law: OffspringLaw, r: int) -> float:
    """beta^(r) = f^(r)(1) = sum_n n(n-1)...(n-r+1) b_n."""
    if r < 1:
        raise ValueError("r must be >= 1")
    return math.fsum(falling_factorial(n, r) * bn for n, bn in enumerate(law.b) if n >= r)


def g_terms(law: OffspringLaw, n: int, lower: Sequence[float]) -> np.ndarray:
    """Per-r pieces of g_n: entry r-2 is (beta^(r)/r!) * sum over compositions into r parts."""
    if n < 2:
        raise ValueError("g_n is defined for n >= 2")
    if len(lower) != n - 1:
        raise ArityMismatch(f"g_{n} needs {n - 1} lower moments, got {len(lower)}")
    m = [None] + [float(v) for v in lower]
    out = np.zeros(n - 1)
    for r in range(2, n + 1):
        beta_r = factorial_moment(law, r)
        if beta_r == 0.0:
            continue
        acc = 0.0
        for parts, weight in _partition_table(n, r):
            prod = float(weight)
            for i in parts:
                prod *= m[i]
            acc += prod
        out[r - 2] = beta_r / math.factorial(r) * acc
    return out


def g_n(law: OffspringLaw, n: int, lower: Sequence[float]) -> float:
    """Source term g_n(m_1, ..., m_{n-1}) of the n-th moment equation."""
    return float(math.fsum(g_terms(law, n, lower)))


def law_to_spec(law: OffspringLaw) -> dict:
    return {"b": {str(n): v for n, v in enumerate(law.b) if n != 1 and v != 0.0}}
