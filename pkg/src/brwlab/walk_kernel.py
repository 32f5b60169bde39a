"""Random-walk generators on Z^d and their Fourier-side quantities.

A kernel is the jump-intensity function a(z) of a symmetric, spatially
homogeneous continuous-time random walk.  Everything downstream
(transition probabilities, Green's functions, truncated operators, the
Monte Carlo jump sampler) is derived from it.

Torus integrals ``(2 pi)^-d int f(theta) dtheta`` are evaluated with a graded
rule: the cube [-pi, pi]^d is split into dyadic shells around theta = 0, every
shell into congruent boxes, and every box carries a tensor Gauss-Legendre
rule.  Integrands that are smooth away from the origin therefore converge
geometrically in the per-box order, and integrable point singularities at the
origin (1/(-phi) for transient walks) are handled by extrapolating the
self-similar shell contributions.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.special import gamma

from .errors import (
    AsymmetricKernel,
    ConfigError,
    NegativeIntensity,
    QuadratureNotConverged,
    TailDivergence,
    ZeroSupport,
)
from .lattice_sums import lattice_zeta, power_law_symbol

FINITE = "finite"
HEAVY = "heavy_tail"

DEFAULT_RTOL = 1e-8
_ORDERS = (8, 12, 16, 24, 32, 48, 64, 96, 128, 192, 256)
_SINGULAR_DEPTH = 48


@dataclass(frozen=True)
class WalkKernel:
    """Symmetric jump intensities a(z), z != 0, with total rate q = -a(0).

    ``support``/``rates`` describe a finite-support walk.  A heavy-tailed walk
    has a(z) = scale / |z|^(d + alpha) for every z != 0; ``cutoff`` is the
    radius up to which jumps are tabulated explicitly (alias sampling); beyond
    it they are handled analytically.
    """

    dimension: int
    variant: str
    total_rate: float
    support: tuple = ()
    rates: tuple = ()
    alpha: float | None = None
    scale: float | None = None
    cutoff: int | None = None
    _lookup: dict = field(default=None, compare=False, hash=False, repr=False)

    @property
    def is_heavy(self) -> bool:
        return self.variant == HEAVY

    @property
    def a0(self) -> float:
        return -self.total_rate

    def intensity(self, z) -> float:
        """a(z) for a single displacement (a(0) = -q)."""
        z = tuple(int(v) for v in np.atleast_1d(z))
        if len(z) != self.dimension:
            raise ValueError(f"displacement must have {self.dimension} components")
        if not any(z):
            return self.a0
        if self.is_heavy:
            return self.scale * math.hypot(*z) ** -(self.dimension + self.alpha)
        return self._lookup.get(z, 0.0)

    def intensity_array(self, displacements: np.ndarray) -> np.ndarray:
        """Vectorised a(z) for z != 0 (rows of an integer array); a(0) maps to 0."""
        disp = np.asarray(displacements)
        if self.is_heavy:
            r2 = np.sum(disp.astype(float) ** 2, axis=-1)
            with np.errstate(divide="ignore"):
                out = self.scale * r2 ** (-0.5 * (self.dimension + self.alpha))
            return np.where(r2 > 0, out, 0.0)
        out = np.zeros(disp.shape[:-1])
        for z, r in zip(self.support, self.rates):
            out[np.all(disp == np.asarray(z), axis=-1)] = r
        return out

    def symbol(self, theta) -> np.ndarray:
        """phi(theta) = sum_z a(z) cos(theta.z), including a(0) = -q."""
        theta = np.asarray(theta, dtype=float)
        if self.is_heavy:
            return self.scale * power_law_symbol(theta, self.dimension, self.alpha)
        out = np.zeros(theta.shape[:-1])
        for z, r in zip(self.support, self.rates):
            out += r * (np.cos(theta @ np.asarray(z, dtype=float)) - 1.0)
        return out

    def max_range(self) -> int:
        """Largest |z|_inf in a finite support."""
        if self.is_heavy:
            raise ValueError("heavy-tailed kernels have unbounded range")
        return max(max(abs(c) for c in z) for z in self.support)

    def variance_finite(self) -> bool:
        return not self.is_heavy


def _generates_lattice(vectors: Sequence[Sequence[int]], d: int) -> bool:
    """True if the integer vectors generate Z^d as a group (Hermite reduction)."""
    rows = [list(v) for v in vectors if any(v)]
    for col in range(d):
        # Euclid on column col among rows at index >= col
        while True:
            live = [i for i in range(col, len(rows)) if rows[i][col] != 0]
            if len(live) <= 1:
                break
            piv = min(live, key=lambda i: abs(rows[i][col]))
            for i in live:
                if i != piv:
                    f = rows[i][col] // rows[piv][col]
                    rows[i] = [a - f * b for a, b in zip(rows[i], rows[piv])]
        live = [i for i in range(col, len(rows)) if rows[i][col] != 0]
        if not live:
            return False
        rows[col], rows[live[0]] = rows[live[0]], rows[col]
        if abs(rows[col][col]) != 1:
            return False
    return True


def _parse_site(key, d: int) -> tuple:
    if isinstance(key, str):
        parts = [p for p in key.replace(";", ",").split(",") if p.strip()]
        site = tuple(int(p) for p in parts)
    else:
        site = tuple(int(v) for v in np.atleast_1d(key))
    if len(site) != d:
        raise ConfigError(f"site {key!r} does not have {d} coordinates")
    return site


def finite_kernel(intensities: Mapping, dimension: int) -> WalkKernel:
    support, rates = [], []
    for key, val in intensities.items():
        z = _parse_site(key, dimension)
        val = float(val)
        if not any(z):
            continue  # a(0) is implied by the other entries
        if val < 0:
            raise NegativeIntensity(f"a{z} = {val} < 0")
        if val > 0:
            support.append(z)
            rates.append(val)
    if not support:
        raise ZeroSupport("kernel has no positive jump intensity")
    lookup = dict(zip(support, rates))
    for z, r in lookup.items():
        mz = tuple(-c for c in z)
        other = lookup.get(mz, 0.0)
        if not math.isclose(r, other, rel_tol=1e-12, abs_tol=0.0):
            raise AsymmetricKernel(f"a{z} = {r} but a{mz} = {other}")
    if not _generates_lattice(support, dimension):
        raise ZeroSupport("kernel support does not generate the lattice")
    order = sorted(range(len(support)), key=lambda i: support[i])
    support = tuple(support[i] for i in order)
    rates = tuple(rates[i] for i in order)
    return WalkKernel(
        dimension=dimension,
        variant=FINITE,
        total_rate=float(math.fsum(rates)),
        support=support,
        rates=rates,
        _lookup=dict(zip(support, rates)),
    )


def simple_random_walk(dimension: int, rate: float = 1.0) -> WalkKernel:
    """Nearest-neighbour walk with a(+-e_i) = rate / (2d)."""
    ints = {}
    for i in range(dimension):
        e = [0] * dimension
        e[i] = 1
        ints[tuple(e)] = rate / (2 * dimension)
        e[i] = -1
        ints[tuple(e)] = rate / (2 * dimension)
    return finite_kernel(ints, dimension)


def heavy_tail_kernel(
    dimension: int,
    alpha: float,
    scale: float | None = None,
    total_rate: float = 1.0,
    cutoff: int = 64,
) -> WalkKernel:
    """a(z) = C |z|^-(d+alpha); C from ``scale`` or from q = ``total_rate``."""
    if not 0.0 < alpha < 2.0:
        raise TailDivergence(f"alpha = {alpha} outside (0, 2)")
    if cutoff < 1:
        raise ConfigError("cutoff radius must be >= 1")
    zsum = lattice_zeta(dimension, dimension + alpha)
    if scale is None:
        if total_rate <= 0:
            raise NegativeIntensity("total rate must be positive")
        scale = total_rate / zsum
    elif scale <= 0:
        raise NegativeIntensity("scale must be positive")
    return WalkKernel(
        dimension=dimension,
        variant=HEAVY,
        total_rate=float(scale * zsum),
        alpha=float(alpha),
        scale=float(scale),
        cutoff=int(cutoff),
    )


def build_kernel(spec: Mapping, dimension: int | None = None) -> WalkKernel:
    """Build a kernel from its JSON description.

    Accepted forms::

        {"type": "finite", "intensities": {"1": 0.5, "-1": 0.5}}
        {"type": "simple", "rate": 1.0}
        {"type": "heavy_tail", "alpha": 0.5, "total_rate": 1.0, "cutoff": 64}
    """
    d = spec.get("dimension", dimension)
    if d is None or int(d) < 1:
        raise ConfigError("kernel dimension must be a positive integer")
    d = int(d)
    kind = spec.get("type", FINITE)
    if kind == FINITE:
        if not spec.get("intensities"):
            raise ZeroSupport("finite kernel needs a nonempty 'intensities' map")
        return finite_kernel(spec["intensities"], d)
    if kind == "simple":
        return simple_random_walk(d, float(spec.get("rate", 1.0)))
    if kind == HEAVY:
        if "alpha" not in spec:
            raise ConfigError("heavy_tail kernel needs 'alpha'")
        return heavy_tail_kernel(
            d,
            float(spec["alpha"]),
            scale=None if spec.get("scale") is None else float(spec["scale"]),
            total_rate=float(spec.get("total_rate", 1.0)),
            cutoff=int(spec.get("cutoff", 64)),
        )
    raise ConfigError(f"unknown kernel type {kind!r}")


def kernel_to_spec(kernel: WalkKernel) -> dict:
    if kernel.is_heavy:
        return {
            "type": HEAVY,
            "alpha": kernel.alpha,
            "scale": kernel.scale,
            "cutoff": kernel.cutoff,
        }
    return {
        "type": FINITE,
        "intensities": {",".join(map(str, z)): r for z, r in zip(kernel.support, kernel.rates)},
    }


def is_transient(kernel: WalkKernel) -> bool:
    """Closed-form transience criterion (never decided by quadrature)."""
    d = kernel.dimension
    if kernel.is_heavy:
        return d >= 2 or kernel.alpha < 1.0
    return d >= 3


# ---------------------------------------------------------------- quadrature


@dataclass(frozen=True)
class SymbolGrid:
    """Quadrature nodes on the torus with normalised weights (sum w = 1).

    ``shell`` labels the dyadic shell of every node; the last label
    (``depth``) is the central core box, which singular integrands skip.
    """

    nodes: np.ndarray
    weights: np.ndarray
    phi: np.ndarray
    shell: np.ndarray
    depth: int
    order: int


@lru_cache(maxsize=None)
def _unit_shell(d: int, order: int):
    """Nodes/weights of the shell [-2,2]^d minus [-1,1]^d, one box per half-space pair.

    Only boxes whose first nonzero lower corner sign is positive are kept:
    symmetric kernels make every integrand here even in theta, so the mirror
    boxes carry identical contributions and their weight is doubled.
    """
    x, w = np.polynomial.legendre.leggauss(order)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    cube = np.array(list(itertools.product(range(order), repeat=d)))
    base = x[cube]
    wbase = np.prod(w[cube], axis=1)
    lowers = [-2.0, -1.0, 0.0, 1.0]
    nodes, weights = [], []
    for corner in itertools.product(lowers, repeat=d):
        if all(c in (-1.0, 0.0) for c in corner):
            continue  # inner cube
        mirror = tuple(-c - 1.0 for c in corner)
        if mirror < corner:
            continue
        factor = 1.0 if mirror == corner else 2.0
        nodes.append(np.asarray(corner) + base)
        weights.append(factor * wbase)
    return np.concatenate(nodes), np.concatenate(weights)


@lru_cache(maxsize=None)
def _unit_core(d: int, order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    cube = np.array(list(itertools.product(range(order), repeat=d)))
    nodes = x[cube]
    weights = np.prod(w[cube], axis=1)
    half = nodes[:, 0] >= 0  # theta -> -theta symmetry; order is even
    if order % 2:
        raise ValueError("core rule needs an even order")
    return nodes[half], 2.0 * weights[half]


@lru_cache(maxsize=256)
def symbol_grid(kernel: WalkKernel, order: int, depth: int) -> SymbolGrid:
    d = kernel.dimension
    unit_nodes, unit_w = _unit_shell(d, order)
    core_nodes, core_w = _unit_core(d, order)
    norm = (2.0 * math.pi) ** -d
    nodes, weights, shell = [], [], []
    for k in range(depth):
        h = math.pi * 2.0 ** (-k - 1)  # shell k spans h < |theta|_inf < 2h
        nodes.append(h * unit_nodes)
        weights.append(h**d * unit_w * norm)
        shell.append(np.full(unit_w.size, k))
    h = math.pi * 2.0**-depth
    nodes.append(h * core_nodes)
    weights.append(h**d * core_w * norm)
    shell.append(np.full(core_w.size, depth))
    nodes = np.concatenate(nodes)
    return SymbolGrid(
        nodes=nodes,
        weights=np.concatenate(weights),
        phi=kernel.symbol(nodes),
        shell=np.concatenate(shell),
        depth=depth,
        order=order,
    )


def _depth_for_scale(kernel: WalkKernel, tau: float) -> int:
    """Shell depth so that the core box is small next to the feature width at time scale tau."""
    q = kernel.total_rate
    if kernel.is_heavy:
        # the |theta|^alpha cusp defeats Gauss on the core box; push it far down
        width = (1.0 + q * tau) ** (-1.0 / kernel.alpha)
        return int(max(_SINGULAR_DEPTH, math.ceil(math.log2(math.pi / width)) + 8))
    width = (1.0 + q * tau) ** -0.5
    return int(min(_SINGULAR_DEPTH, max(2, math.ceil(math.log2(math.pi / width)) + 1)))


def _singular_degree(kernel: WalkKernel) -> float:
    """Homogeneity degree d + gamma of 1/(-phi) near theta = 0."""
    gam = -kernel.alpha if kernel.is_heavy else -2.0
    return kernel.dimension + gam


def torus_mean(
    kernel: WalkKernel,
    integrand: Callable[[np.ndarray, np.ndarray], np.ndarray],
    *,
    tau: float = 1.0,
    singular: bool = False,
    rtol: float = DEFAULT_RTOL,
    atol: float = 1e-300,
    min_order: int = 8,
) -> float:
    """(2 pi)^-d int integrand(theta, phi(theta)) dtheta over [-pi, pi]^d.

    ``integrand`` must be even in theta.  With ``singular=True`` the core box
    is replaced by the geometric extrapolation of the shell series, exact for
    a homogeneous leading singularity.
    """
    depth = _SINGULAR_DEPTH if singular else _depth_for_scale(kernel, tau)
    prev = None
    for order in _ORDERS:
        if order < min_order:
            continue
        grid = symbol_grid(kernel, order, depth)
        vals = integrand(grid.nodes, grid.phi) * grid.weights
        per_shell = np.bincount(grid.shell, weights=vals, minlength=depth + 1)
        if singular:
            ratio = 2.0 ** -_singular_degree(kernel)
            core = per_shell[depth - 1] * ratio / (1.0 - ratio)
            total = math.fsum(per_shell[:depth]) + core
        else:
            total = math.fsum(per_shell)
        if prev is not None and abs(total - prev) <= rtol * abs(total) + atol:
            return total
        prev = total
    raise QuadratureNotConverged(f"torus quadrature did not reach rtol={rtol:g} at order {_ORDERS[-1]}")


def _displacement(kernel: WalkKernel, x, y) -> np.ndarray:
    d = kernel.dimension
    x = np.zeros(d, dtype=int) if x is None else np.atleast_1d(np.asarray(x, dtype=int))
    y = np.zeros(d, dtype=int) if y is None else np.atleast_1d(np.asarray(y, dtype=int))
    if x.size != d or y.size != d:
        raise ValueError(f"sites must have {d} coordinates")
    return (y - x).astype(float)


def _oscillation_order(z: np.ndarray) -> int:
    """Minimum Gauss order per box so cos(theta.z) is resolved on the outer shell."""
    return int(8 + 2 * math.ceil(float(np.max(np.abs(z)))))


def transition_probability(kernel: WalkKernel, t: float, x=None, y=None, rtol: float = DEFAULT_RTOL) -> float:
    """p(t, x, y) = (2 pi)^-d int exp(t phi) cos(theta.(y - x)) dtheta."""
    if t < 0:
        raise ValueError("t must be >= 0")
    z = _displacement(kernel, x, y)
    if t == 0:
        return 1.0 if not np.any(z) else 0.0
    return _transition_cached(kernel, float(t), tuple(z), rtol)


@lru_cache(maxsize=4096)
def _transition_cached(kernel, t, z, rtol):
    z = np.asarray(z)

    def f(theta, phi):
        return np.exp(t * phi) * np.cos(theta @ z)

    val = torus_mean(kernel, f, tau=t, rtol=rtol, atol=1e-15, min_order=_oscillation_order(z))
    return float(min(max(val, 0.0), 1.0))


def green(kernel: WalkKernel, lam: float, x=None, y=None, rtol: float = DEFAULT_RTOL) -> float:
    """G_lambda(x, y) = int_0^inf exp(-lambda t) p(t, x, y) dt (math.inf if divergent)."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    z = _displacement(kernel, x, y)
    if lam == 0 and not is_transient(kernel):
        return math.inf
    return _green_cached(kernel, float(lam), tuple(z), rtol)


@lru_cache(maxsize=4096)
def _green_cached(kernel, lam, z, rtol):
    z = np.asarray(z)
    singular = lam == 0.0

    def f(theta, phi):
        denom = lam - phi
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.cos(theta @ z) / denom
        return np.where(denom > 0, out, 0.0)

    tau = 1.0 / lam if lam > 0 else 1.0
    return float(
        torus_mean(kernel, f, tau=tau, singular=singular, rtol=rtol, min_order=_oscillation_order(z))
    )


def green_norm_squared(kernel: WalkKernel, lam: float, rtol: float = DEFAULT_RTOL) -> float:
    """sum_z G_lambda(z, 0)^2 = (2 pi)^-d int (lambda - phi)^-2 dtheta, for lambda > 0."""
    if lam <= 0:
        raise ValueError("lambda must be > 0")

    def f(theta, phi):
        return (lam - phi) ** -2.0

    return float(torus_mean(kernel, f, tau=1.0 / lam, rtol=rtol))


def stable_tail_constant(kernel: WalkKernel) -> float:
    """c in -phi(theta) ~ c |theta|^alpha for a heavy-tailed kernel."""
    d, a = kernel.dimension, kernel.alpha
    return kernel.scale * math.pi ** (0.5 * d) * abs(gamma(-0.5 * a)) / (2.0**a * gamma(0.5 * (d + a)))


def jump_tail_mass(kernel: WalkKernel, radius: float) -> float:
    """Total rate of jumps with |z| > radius (Euclidean norm)."""
    if not kernel.is_heavy:
        return float(sum(r for z, r in zip(kernel.support, kernel.rates) if math.hypot(*z) > radius))
    return kernel.total_rate - float(np.sum(ball_intensities(kernel, int(math.floor(radius)))[1]))


def ball_intensities(kernel: WalkKernel, radius: int):
    """Displacements with 0 < |z| <= radius and their intensities."""
    d = kernel.dimension
    g = np.arange(-radius, radius + 1)
    pts = np.stack(np.meshgrid(*([g] * d), indexing="ij"), axis=-1).reshape(-1, d)
    r2 = np.sum(pts**2, axis=1)
    keep = (r2 > 0) & (r2 <= radius * radius)
    pts = pts[keep]
    return pts, kernel.intensity_array(pts)
