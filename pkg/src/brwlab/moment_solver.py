"""Moment hierarchy of the branching walk on a truncated lattice.

With m_n = exp(-b0 t) u_n the equations become

    du_1/dt = H u_1,
    du_n/dt = H u_n + delta_0 * sum_r exp(-(r-1) b0 t) G_r(u_1(t,0), ..., u_{n-1}(t,0)),

where H = A + beta* Delta_0 and G_r is the degree-r part of g_n.  Local
moments start from delta_y; total moments are written m_n = exp(-b0 t)(1 + v_n),
which removes the constant far field exactly (A 1 = 0) and leaves an excess
v_n that starts at 0 and is fed at the source with beta* + (scaled g_n).
The box {|x|_inf <= L} has absorbing walls: jumps leaving it are lost.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy import fft as spfft
from scipy.integrate import BDF, DOP853, RK45, Radau
from scipy.sparse.linalg import LinearOperator, eigsh

from .branching_law import OffspringLaw, beta_star, g_terms
from .errors import (
    DegenerateWindow,
    NoConvergence,
    NonPositiveValues,
    StiffnessFailure,
    TruncationTooSmall,
)
from .walk_kernel import WalkKernel

LOCAL = "local"
TOTAL = "total"
POINTS_PER_DECADE = 32
_METHODS = {"DOP853": DOP853, "RK45": RK45, "Radau": Radau, "BDF": BDF}


class TruncatedOperator:
    """E = A + beta* Delta_0 - b0 I restricted to the box |x|_inf <= L.

    Sites are stored in C order of their shifted coordinates x + L.
    ``apply_h`` applies H = E + b0 I, the generator the solver actually uses.
    """

    def __init__(self, kernel: WalkKernel, law: OffspringLaw, radius: int):
        if radius < 1:
            raise ValueError("box radius must be >= 1")
        self.kernel = kernel
        self.law = law
        self.radius = int(radius)
        self.dimension = d = kernel.dimension
        self.side = 2 * self.radius + 1
        self.shape = (self.side,) * d
        self.size = self.side**d
        self.beta_star = beta_star(law)
        self.death_rate = law.death_rate
        self.origin = self.index((0,) * d)
        self._matrix = None
        self._fft = None
        if kernel.is_heavy:
            self._build_fft()
        else:
            self._build_sparse()

    # site bookkeeping
    def index(self, site) -> int:
        site = np.asarray(site, dtype=int).reshape(-1)
        if np.any(np.abs(site) > self.radius):
            raise ValueError(f"site {tuple(site)} outside the box of radius {self.radius}")
        return int(np.ravel_multi_index(tuple(site + self.radius), self.shape))

    def coordinates(self) -> np.ndarray:
        grids = np.meshgrid(*([np.arange(-self.radius, self.radius + 1)] * self.dimension), indexing="ij")
        return np.stack([g.reshape(-1) for g in grids], axis=1)

    def boundary_mask(self) -> np.ndarray:
        return np.max(np.abs(self.coordinates()), axis=1) == self.radius

    def _build_sparse(self):
        L, d = self.radius, self.dimension
        idx = np.arange(self.size).reshape(self.shape)
        rows, cols, vals = [], [], []
        for z, rate in zip(self.kernel.support, self.kernel.rates):
            # entry (x, x+z) = a(z) whenever both ends are in the box
            src = tuple(slice(max(0, -c), self.side - max(0, c)) for c in z)
            dst = tuple(slice(max(0, c), self.side - max(0, -c)) for c in z)
            r = idx[src].reshape(-1)
            c = idx[dst].reshape(-1)
            rows.append(r)
            cols.append(c)
            vals.append(np.full(r.size, rate))
        diag = np.full(self.size, self.kernel.a0)
        diag[self.origin] += self.beta_star
        rows.append(np.arange(self.size))
        cols.append(np.arange(self.size))
        vals.append(diag)
        self._matrix = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(self.size, self.size)
        )
        _ = L, d

    def _build_fft(self):
        L, d = self.radius, self.dimension
        span = np.arange(-2 * L, 2 * L + 1)
        disp = np.stack(np.meshgrid(*([span] * d), indexing="ij"), axis=-1)
        kern = self.kernel.intensity_array(disp)  # a(0) -> 0
        self._fft_shape = tuple(spfft.next_fast_len(self.side + 4 * L, real=True) for _ in range(d))
        self._kernel_hat = spfft.rfftn(kern, s=self._fft_shape)
        self._fft_slice = tuple(slice(2 * L, 2 * L + self.side) for _ in range(d))

    def as_matrix(self):
        """Sparse H for finite kernels (None for FFT-backed heavy tails)."""
        return self._matrix

    def apply_h(self, v: np.ndarray) -> np.ndarray:
        """H v for v of shape (size,) or (size, k)."""
        if self._matrix is not None:
            return self._matrix @ v
        cols = v.reshape(self.size, -1)
        out = np.empty_like(cols)
        for j in range(cols.shape[1]):
            field_ = cols[:, j].reshape(self.shape)
            conv = spfft.irfftn(spfft.rfftn(field_, s=self._fft_shape) * self._kernel_hat, s=self._fft_shape)
            out[:, j] = conv[self._fft_slice].reshape(-1)
        out += self.kernel.a0 * cols
        out[self.origin] += self.beta_star * cols[self.origin]
        return out.reshape(v.shape)

    def apply(self, v: np.ndarray) -> np.ndarray:
        """E v."""
        return self.apply_h(v) - self.death_rate * v

    def spectral_bound(self) -> float:
        """Upper bound on the spectral radius of A restricted to the box (2q)."""
        return 2.0 * self.kernel.total_rate


@dataclass
class MomentTrajectory:
    order: int
    variant: str
    target: tuple | None  # y for local moments
    times: np.ndarray
    sites: np.ndarray  # (S, d) tracked sites
    values: np.ndarray  # (K, S) values of m_n
    final: np.ndarray  # m_n over the whole box at the last time
    metadata: dict = field(default_factory=dict)

    def column(self, site) -> int:
        site = np.asarray(site, dtype=int).reshape(1, -1)
        hits = np.flatnonzero(np.all(self.sites == site, axis=1))
        if hits.size == 0:
            raise KeyError(f"site {tuple(site[0])} is not tracked")
        return int(hits[0])

    def series(self, site=None) -> np.ndarray:
        if site is None:
            site = (0,) * self.sites.shape[1]
        return self.values[:, self.column(site)]

    def at(self, t: float, site=None) -> float:
        k = int(np.argmin(np.abs(self.times - t)))
        if not math.isclose(self.times[k], t, rel_tol=1e-12, abs_tol=1e-12):
            raise KeyError(f"time {t} is not on the output grid")
        return float(self.series(site)[k])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [";".join(map(str, s)) for s in self.sites])
        for t, row in zip(self.times, self.values):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row])
        return buf.getvalue()


def output_grid(horizon: float, t_min: float | None = None, extra=(), per_decade: int = POINTS_PER_DECADE):
    """0, then geometric points with ``per_decade`` per factor 10 up to the horizon."""
    if t_min is None:
        t_min = min(1e-2, horizon / 100.0)
    n = int(math.ceil(per_decade * math.log10(horizon / t_min)))
    k0 = math.floor(per_decade * math.log10(t_min))
    pts = 10.0 ** (np.arange(k0, k0 + n + 2) / per_decade)
    pts = pts[pts < horizon * (1 - 1e-12)]
    grid = np.concatenate([[0.0], pts, [horizon], np.asarray(extra, dtype=float)])
    grid = np.unique(np.round(grid, 12))
    return grid[(grid >= 0) & (grid <= horizon)]


def default_tracked(op: TruncatedOperator) -> np.ndarray:
    r = min(op.radius, 3 if op.dimension <= 2 else 1)
    coords = op.coordinates()
    return coords[np.max(np.abs(coords), axis=1) <= r]


def _initial(op: TruncatedOperator, variant: str, target) -> np.ndarray:
    if variant == LOCAL:
        v = np.zeros(op.size)
        v[op.index(target)] = 1.0
        return v
    return np.zeros(op.size)


def _source(law: OffspringLaw, n_max: int, variant: str, b0: float, bstar: float, t: float, origin_vals):
    """Scaled source at the origin for orders 1..n_max from scaled origin values."""
    src = np.zeros(n_max)
    if variant == TOTAL:
        src[:] = bstar
        u = 1.0 + origin_vals
    else:
        u = origin_vals
    for n in range(2, n_max + 1):
        terms = g_terms(law, n, u[: n - 1])
        decay = np.exp(-b0 * t * np.arange(1, n))  # r - 1 for r = 2..n
        src[n - 1] += float(np.dot(terms, decay))
    return src


def solve_moments(
    config,
    n_max: int = 1,
    horizon: float | None = None,
    variant: str = LOCAL,
    site=None,
    *,
    times=None,
    track=None,
    method: str = "DOP853",
    rtol: float | None = None,
    atol: float | None = None,
    leak_tol: float | None = None,
    check_leak: bool = True,
    operator: TruncatedOperator | None = None,
) -> list:
    """Integrate the hierarchy for orders 1..n_max; returns one trajectory per order.

    ``config`` is a :class:`~brwlab.config.ModelConfig` (kernel, law,
    truncation radius, tolerances).  ``site`` is the target y of the local
    moments m_n(t, x, y); total moments ignore it.  Orders are integrated
    jointly so the source term sees the exact origin values of lower orders.
    """
    law = config.law
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    if n_max > law.g_order:
        raise ValueError(f"n_max={n_max} exceeds the cached g_n order {law.g_order}")
    if variant not in (LOCAL, TOTAL):
        raise ValueError(f"unknown variant {variant!r}")
    horizon = float(config.horizon if horizon is None else horizon)
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    rtol = config.tol("rtol") if rtol is None else rtol
    atol = config.tol("atol") if atol is None else atol
    if leak_tol is None:
        leak_tol = config.tol("leak_tol") if variant == LOCAL else config.tol("leak_tol_total")
    op = operator or TruncatedOperator(config.kernel, law, config.truncation)
    d = op.dimension
    target = tuple(site) if site is not None else (0,) * d

    grid = np.asarray(times, dtype=float) if times is not None else output_grid(horizon, extra=config.checkpoints)
    grid = np.unique(np.concatenate([[0.0], grid[(grid > 0) & (grid <= horizon)]]))
    if track is None:
        sites = default_tracked(op)
    elif isinstance(track, str) and track == "all":
        sites = op.coordinates()
    else:
        sites = np.atleast_2d(np.asarray(track, dtype=int))
    cols = np.array([op.index(s) for s in sites])

    b0 = op.death_rate
    bstar = op.beta_star
    origin = op.origin
    N = op.size
    u0 = np.tile(_initial(op, variant, target)[:, None], (1, n_max))

    def rhs(t, y):
        u = y.reshape(N, n_max)
        du = op.apply_h(u)
        du[origin] += _source(law, n_max, variant, b0, bstar, t, u[origin])
        return du.reshape(-1)

    kwargs = dict(rtol=rtol, atol=atol)
    if method in ("Radau", "BDF") and op.as_matrix() is not None:
        kwargs["jac"] = sp.kron(op.as_matrix(), sp.identity(n_max), format="csr")
    solver = _METHODS[method](rhs, 0.0, u0.reshape(-1), horizon, **kwargs)

    scaled = np.empty((grid.size, sites.shape[0], n_max))
    boundary = op.boundary_mask()
    leak = np.zeros(n_max)
    scaled[0] = u0[cols]
    k = 1
    n_steps = 0
    while k < grid.size:
        if solver.status != "running":
            raise StiffnessFailure(f"{method} stopped at t={solver.t:.6g}: {solver.status}")
        msg = solver.step()
        n_steps += 1
        if solver.status == "failed":
            raise StiffnessFailure(f"{method} failed at t={solver.t:.6g}: {msg}")
        if grid[k] > solver.t and solver.status == "running":
            continue
        dense = solver.dense_output()
        while k < grid.size and grid[k] <= solver.t * (1 + 1e-14):
            state = dense(grid[k]).reshape(N, n_max) if grid[k] != solver.t else solver.y.reshape(N, n_max)
            scaled[k] = state[cols]
            peak = np.max(np.abs(state), axis=0)
            edge = np.max(np.abs(state[boundary]), axis=0) if np.any(boundary) else np.zeros(n_max)
            with np.errstate(divide="ignore", invalid="ignore"):
                leak = np.maximum(leak, np.where(peak > 0, edge / peak, 0.0))
            k += 1
    final_state = solver.y.reshape(N, n_max)

    if check_leak and leak[0] > leak_tol:
        raise TruncationTooSmall(
            f"boundary/peak ratio of the first moment {leak[0]:.3g} exceeds {leak_tol:g} at L={op.radius}"
        )

    factor = np.exp(-b0 * grid)[:, None]
    meta = {
        "truncation": op.radius,
        "method": method,
        "rtol": rtol,
        "atol": atol,
        "steps": n_steps,
        "leak": leak.tolist(),
        "death_rate": b0,
        "beta_star": bstar,
    }
    out = []
    for n in range(n_max):
        vals = scaled[:, :, n]
        fin = final_state[:, n]
        if variant == TOTAL:
            vals = 1.0 + vals
            fin = 1.0 + fin
        out.append(
            MomentTrajectory(
                order=n + 1,
                variant=variant,
                target=target if variant == LOCAL else None,
                times=grid.copy(),
                sites=sites.copy(),
                values=vals * factor,
                final=fin * math.exp(-b0 * horizon),
                metadata=dict(meta),
            )
        )
    return out


def evolve_first_moment(op: TruncatedOperator, initial: np.ndarray, times, rtol=1e-8, atol=1e-12) -> np.ndarray:
    """exp(tE) applied to an arbitrary initial vector, sampled at ``times`` (rows)."""
    times = np.asarray(times, dtype=float)
    solver = DOP853(lambda t, y: op.apply_h(y), 0.0, np.asarray(initial, dtype=float), float(times.max()), rtol=rtol, atol=atol)
    out = np.empty((times.size, op.size))
    k = 0
    while k < times.size and times[k] == 0.0:
        out[k] = initial
        k += 1
    while k < times.size:
        solver.step()
        if solver.status == "failed":
            raise StiffnessFailure("DOP853 failed")
        dense = solver.dense_output()
        while k < times.size and times[k] <= solver.t * (1 + 1e-14):
            out[k] = dense(times[k])
            k += 1
    return out * np.exp(-op.death_rate * times)[:, None]


def choose_truncation(
    config,
    horizon: float | None = None,
    start: int = 16,
    rtol: float = 1e-6,
    max_radius: int = 4096,
    site=None,
    n_max: int = 1,
):
    """Double L until m_1(T, 0, y) changes by < rtol relative; returns (L, change)."""
    horizon = config.horizon if horizon is None else horizon
    target = (0,) * config.dimension if site is None else tuple(site)

    def value(L):
        traj = solve_moments(
            config.with_(truncation=L), n_max=n_max, horizon=horizon, site=target,
            times=[horizon], track=[(0,) * config.dimension], check_leak=False,
        )
        return traj[0].series()[-1]

    L = max(start, max(abs(c) for c in target) + 1)
    prev = value(L)
    while 2 * L <= max_radius:
        cur = value(2 * L)
        change = abs(cur - prev) / abs(cur)
        if change < rtol:
            return L, change
        L, prev = 2 * L, cur
    raise TruncationTooSmall(f"doubling did not converge below radius {max_radius}")


@dataclass(frozen=True)
class GrowthFit:
    rho: float
    kappa: float
    eta: float
    log_prefactor: float
    residual: float
    window: tuple
    points: int

    def to_dict(self) -> dict:
        return {
            "rho": self.rho,
            "kappa": self.kappa,
            "eta": self.eta,
            "log_prefactor": self.log_prefactor,
            "residual": self.residual,
            "window": list(self.window),
            "points": self.points,
        }


def fit_growth_series(
    times,
    values,
    window,
    free=("rho", "kappa"),
    pinned=None,
) -> GrowthFit:
    """Least squares for log m(t) = c + rho t + kappa log t + eta log log t.

    Exponents not listed in ``free`` are fixed at their ``pinned`` value
    (default 0).
    """
    pinned = dict(pinned or {})
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    lo, hi = window
    sel = (t >= lo) & (t <= hi)
    t, v = t[sel], v[sel]
    if np.any(v <= 0):
        raise NonPositiveValues("values must be positive on the fit window")
    if v.size:
        keep = v >= 1e-300 * np.max(v)
        t, v = t[keep], v[keep]
    if "eta" in free and (t.size and t.min() <= math.e):
        raise DegenerateWindow("a log-log term needs t > e on the whole window")
    basis = {
        "rho": t,
        "kappa": np.log(t) if t.size else t,
        "eta": np.log(np.log(t)) if "eta" in free or pinned.get("eta", 0.0) else np.zeros_like(t),
    }
    names = [k for k in ("rho", "kappa", "eta") if k in free]
    if t.size < len(names) + 2:
        raise DegenerateWindow(f"only {t.size} points in window {window}")
    y = np.log(v)
    for k in ("rho", "kappa", "eta"):
        if k not in free:
            y = y - pinned.get(k, 0.0) * basis[k]
    X = np.column_stack([np.ones_like(t)] + [basis[k] for k in names])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise DegenerateWindow("fit design matrix is rank deficient")
    res = float(np.linalg.norm(X @ coef - y))
    got = {k: float(pinned.get(k, 0.0)) for k in ("rho", "kappa", "eta")}
    for k, c in zip(names, coef[1:]):
        got[k] = float(c)
    return GrowthFit(
        rho=got["rho"],
        kappa=got["kappa"],
        eta=got["eta"],
        log_prefactor=float(coef[0]),
        residual=res,
        window=(float(lo), float(hi)),
        points=int(t.size),
    )


def fit_growth(trajectory: MomentTrajectory, site=None, window=None, free=("rho", "kappa"), pinned=None) -> GrowthFit:
    if window is None:
        T = trajectory.times[-1]
        window = (T / 10.0, T)
    return fit_growth_series(trajectory.times, trajectory.series(site), window, free=free, pinned=pinned)


@dataclass(frozen=True)
class Eigenpair:
    value: float
    vector: np.ndarray
    residual: float
    iterations: int
    isolated: bool


def leading_eigenpair(
    op: TruncatedOperator,
    tol: float = 1e-8,
    max_iter: int = 200_000,
    isolated: bool | None = None,
) -> Eigenpair:
    """Perron pair of E on the box by shifted power iteration.

    The shift 2q + b0 makes E + sI entrywise nonnegative with nonnegative
    spectrum, so the iterates stay positive and converge to the top of the
    spectrum.  When beta* does not exceed beta_c the top is the (truncated)
    edge of the continuous spectrum and convergence is slow; the result is
    flagged ``isolated=False``.
    """
    shift = op.spectral_bound() + op.death_rate
    x = np.ones(op.size) / math.sqrt(op.size)
    lam = -math.inf
    res = math.inf
    for it in range(1, max_iter + 1):
        ex = op.apply(x)
        lam = float(x @ ex)
        res = float(np.linalg.norm(ex - lam * x))
        if res < tol:
            break
        y = ex + shift * x
        x = y / np.linalg.norm(y)
    else:
        raise NoConvergence(f"power iteration residual {res:.3g} after {max_iter} iterations")
    x = np.abs(x)  # Perron vector; removes -0.0 from underflowed tails
    x /= np.linalg.norm(x)
    if isolated is None:
        from .spectral import beta_critical

        isolated = op.beta_star > beta_critical(op.kernel)
    return Eigenpair(value=lam, vector=x, residual=res, iterations=it, isolated=bool(isolated))


def leading_eigenvalue_lanczos(op: TruncatedOperator, tol: float = 1e-10) -> float:
    """Cross-check of the top of the spectrum of E with ARPACK (symmetric Lanczos)."""
    lin = LinearOperator((op.size, op.size), matvec=op.apply, dtype=float)
    vals = eigsh(lin, k=1, which="LA", tol=tol, return_eigenvectors=False)
    return float(vals[0])
