"""Predicted long-time forms C t^kappa (ln t)^eta e^{rho t} of the moments and checks against fits."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import PchipInterpolator

from .errors import TailUnbounded, UnsupportedCombination, WindowTooShort
from .moment_solver import GrowthFit, MomentTrajectory, fit_growth
from .spectral import (
    CRITICAL,
    PURE_WALK,
    SUBCRITICAL_BOUNDARY,
    SUBCRITICAL_EIGEN,
    SUBCRITICAL_WEAK,
    SUPERCRITICAL,
    RegimeReport,
)
from .walk_kernel import WalkKernel, green, green_norm_squared

LOCAL = "local"
TOTAL = "total"

RHO_RTOL = 0.05
RHO_ATOL = 1e-3
KAPPA_ATOL = 0.15
KAPPA_ATOL_HEAVY = 0.2
KAPPA_ATOL_LOG = 0.5
ETA_ATOL = 1.0
LOG_WINDOW_START = 10.0


@dataclass(frozen=True)
class AsymptoteForm:
    rho: float
    kappa: float
    eta: float
    n: int
    variant: str
    source: str  # table row label
    free: tuple = ("rho", "kappa")  # exponents fitted; the rest are pinned at the prediction

    def to_dict(self) -> dict:
        out = asdict(self)
        out["free"] = list(self.free)
        return out

    def profile(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.exp(self.rho * t) * t**self.kappa
        if self.eta:
            out = out * np.log(t) ** self.eta
        return out


def _power_row(kernel_heavy: bool, d: int, alpha: float | None, regime: str, variant: str):
    """(kappa, eta, label) for beta* <= beta_c; None when the combination is excluded."""
    if kernel_heavy:
        r = d / alpha
        if r <= 1.0:
            return None  # recurrent: beta_c = 0, no weak or boundary regime
        if regime == SUBCRITICAL_WEAK:
            return (-r, 0.0, "heavy weak local") if variant == LOCAL else (0.0, 0.0, "heavy weak total")
        if r < 2.0:
            return (r - 2.0, 0.0, "heavy boundary d/a<2 local") if variant == LOCAL else (r - 1.0, 0.0, "heavy boundary d/a<2 total")
        if r == 2.0:
            return (0.0, -1.0, "heavy boundary d/a=2 local") if variant == LOCAL else (1.0, -1.0, "heavy boundary d/a=2 total")
        return (0.0, 0.0, "heavy boundary d/a>2 local") if variant == LOCAL else (1.0, 0.0, "heavy boundary d/a>2 total")
    if d <= 2:
        return None
    if regime == SUBCRITICAL_WEAK:
        return (-d / 2.0, 0.0, "finite weak local") if variant == LOCAL else (0.0, 0.0, "finite weak total")
    if d == 3:
        return (-0.5, 0.0, "finite boundary d=3 local") if variant == LOCAL else (0.5, 0.0, "finite boundary d=3 total")
    if d == 4:
        return (0.0, -1.0, "finite boundary d=4 local") if variant == LOCAL else (1.0, -1.0, "finite boundary d=4 total")
    return (0.0, 0.0, "finite boundary d>=5 local") if variant == LOCAL else (1.0, 0.0, "finite boundary d>=5 total")


def predicted_asymptote(report: RegimeReport, n: int, variant: str, alpha: float | None = None) -> AsymptoteForm:
    """The tabulated form of m_n (local m_n(t,x,y) or total m_n(t,x)) for the report's regime."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if variant not in (LOCAL, TOTAL):
        raise ValueError(f"unknown variant {variant!r}")
    d = report.dimension
    alpha = report.alpha if alpha is None else alpha
    heavy = alpha is not None
    regime = report.regime
    b0 = report.death_rate
    if regime == SUPERCRITICAL:
        return AsymptoteForm(n * report.lambda_E, 0.0, 0.0, n, variant, "supercritical", ("rho",))
    if regime == CRITICAL:
        return AsymptoteForm(0.0, float(n - 1), 0.0, n, variant, "critical", ("kappa",))
    if regime == SUBCRITICAL_EIGEN:
        return AsymptoteForm(report.lambda_E, 0.0, 0.0, n, variant, "subcritical eigenvalue", ("rho",))
    if regime == PURE_WALK:
        if variant == TOTAL:
            return AsymptoteForm(-b0, 0.0, 0.0, n, variant, "pure walk total")
        kappa = -d / alpha if heavy else -d / 2.0
        return AsymptoteForm(-b0, kappa, 0.0, n, variant, "pure walk local")
    if regime in (SUBCRITICAL_WEAK, SUBCRITICAL_BOUNDARY):
        row = _power_row(heavy, d, alpha, regime, variant)
        if row is None:
            raise UnsupportedCombination(
                f"no tabulated form for {regime} with d={d}" + (f", alpha={alpha}" if heavy else "")
            )
        kappa, eta, label = row
        free = ("kappa", "eta") if eta else ("rho", "kappa")
        return AsymptoteForm(-b0, kappa, eta, n, variant, label, free)
    raise UnsupportedCombination(f"unknown regime {regime!r}")


@dataclass(frozen=True)
class ConvolutionLimit:
    times: np.ndarray
    W: np.ndarray
    W0: float
    ratio: np.ndarray  # W / (phi0 t^kappa (ln t)^eta e^{-b0 t})


def _as_callable(f) -> Callable[[float], float]:
    if callable(f):
        return f
    t, v = (np.asarray(a, dtype=float) for a in f)
    if np.any(v <= 0):
        raise ValueError("sampled trajectories must be positive")
    # log-space monotone interpolation keeps exponential tails accurate
    interp = PchipInterpolator(t, np.log(v), extrapolate=False)
    return lambda s: float(np.exp(interp(s)))


def _tail_integrable(rate: float, kappa: float, eta: float, b0: float) -> bool:
    """Is s^kappa (ln s)^eta e^{-(rate - b0) s} integrable at infinity?"""
    gap = rate - b0
    if gap > 0:
        return True
    if gap < 0:
        return False
    return kappa < -1 or (kappa == -1 and eta < -1)


def convolution_limit(
    phi,
    chi,
    b0: float,
    times,
    *,
    kappa: float = 0.0,
    eta: float = 0.0,
    phi0: float = 1.0,
    chi_rate: float | None = None,
    chi_kappa: float | None = None,
    chi_eta: float | None = None,
    epsabs: float = 0.0,
    epsrel: float = 1e-9,
) -> ConvolutionLimit:
    """W(t) = int_0^t phi(t - s) chi(s) ds and W0 = int_0^inf e^{b0 s} chi(s) ds.

    ``phi`` ~ phi0 t^kappa (ln t)^eta e^{-b0 t}; ``chi`` is declared to decay like
    t^chi_kappa (ln t)^chi_eta e^{-chi_rate t} (default: the matched form with
    exponents 2 kappa, 2 eta and rate 2 b0).  Either may be a callable or a
    ``(times, values)`` pair.  TailUnbounded is raised when e^{b0 s} chi(s) is
    not integrable under the declared decay.
    """
    chi_rate = 2.0 * b0 if chi_rate is None else chi_rate
    chi_kappa = 2.0 * kappa if chi_kappa is None else chi_kappa
    chi_eta = 2.0 * eta if chi_eta is None else chi_eta
    if not _tail_integrable(chi_rate, chi_kappa, chi_eta, b0):
        raise TailUnbounded(
            f"e^(b0 s) chi(s) ~ s^{chi_kappa} (ln s)^{chi_eta} e^{-(chi_rate - b0)} s is not integrable"
        )
    sampled_chi = not callable(chi)
    chi_end = float(np.asarray(chi[0])[-1]) if sampled_chi else math.inf
    f_phi = _as_callable(phi)
    f_chi = _as_callable(chi)
    times = np.asarray(times, dtype=float)
    if sampled_chi and times.size and times.max() > chi_end:
        raise ValueError("convolution times must lie inside the sampled chi grid")

    W = np.empty(times.size)
    for i, t in enumerate(times):
        if t <= 0:
            W[i] = 0.0
            continue
        # kinks of piecewise inputs usually sit near s = 1 and t - s = 1
        pts = sorted({p for p in (1.0, t - 1.0) if 0.0 < p < t})
        W[i] = quad(
            lambda s: f_phi(t - s) * f_chi(s), 0.0, t, epsabs=epsabs, epsrel=epsrel, limit=500, points=pts or None
        )[0]

    def weighted(s):
        c = f_chi(s)
        if c <= 0.0:
            return 0.0
        # plain product keeps W0 exactly linear in chi; log form only past overflow
        e = b0 * s
        return math.exp(e) * c if e < 700.0 else math.exp(e + math.log(c))

    if not sampled_chi:
        W0 = quad(weighted, 0.0, math.inf, epsabs=epsabs, epsrel=epsrel, limit=500)[0]
    else:
        head = quad(weighted, 0.0, chi_end, epsabs=epsabs, epsrel=epsrel, limit=500)[0]
        # declared tail from the last sample onwards, matched in value at chi_end
        shape = lambda s: s**chi_kappa * (math.log(s) ** chi_eta if chi_eta else 1.0) * math.exp(-(chi_rate - b0) * s)  # noqa: E731
        c = weighted(chi_end) / shape(chi_end)
        W0 = head + c * quad(shape, chi_end, math.inf, epsabs=epsabs, epsrel=epsrel, limit=500)[0]

    with np.errstate(divide="ignore", invalid="ignore"):
        ref = phi0 * times**kappa * np.exp(-b0 * times)
        if eta:
            ref = ref * np.log(times) ** eta
        ratio = W / ref
    return ConvolutionLimit(times=times, W=W, W0=float(W0), ratio=ratio)


def supercritical_diagnostics(kernel: WalkKernel, report: RegimeReport, trajectories=(), site=None) -> dict:
    """Printed first-moment prefactors against the ODE limits, and the order n* = 2||E|| / lambda_E.

    The squared norms are read as l2 norms over the free argument, so with
    f = G_lambda0(., 0): C1(x, y) = f(x) f(y) / ||f||^2 and
    C1(x) = f(x) / (lambda0 ||f||^2).  Reported only, never asserted.
    """
    if report.regime != SUPERCRITICAL:
        raise ValueError("diagnostics apply to the supercritical regime only")
    d = kernel.dimension
    origin = (0,) * d
    y = origin if site is None else tuple(site)
    lam0, lam_E = report.lambda0, report.lambda_E
    norm2 = green_norm_squared(kernel, lam0)
    f0 = green(kernel, lam0, origin)
    out = {
        "C1_local_printed": f0 * green(kernel, lam0, origin, y) / norm2,
        "C1_total_printed": f0 / (lam0 * norm2),
        # ||A|| <= 2q for a symmetric kernel, so ||E|| <= max(lambda_E, 2q + b0)
        "n_star_bound": 2.0 * max(lam_E, 2.0 * kernel.total_rate + report.death_rate) / lam_E,
    }
    for traj in trajectories:
        if traj.order != 1:
            continue
        T = float(traj.times[-1])
        key = "C1_local_ode" if traj.variant == LOCAL else "C1_total_ode"
        out[key] = float(traj.at(T, origin) * math.exp(-lam_E * T))
        out[key + "_time"] = T
    return out


@dataclass(frozen=True)
class Verdict:
    n: int
    variant: str
    form: AsymptoteForm
    fit: GrowthFit
    passed: bool
    errors: dict

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "variant": self.variant,
            "predicted": self.form.to_dict(),
            "fit": self.fit.to_dict(),
            "errors": self.errors,
            "verdict": "PASS" if self.passed else "FAIL",
        }


def _kappa_tol(form: AsymptoteForm, heavy: bool) -> float:
    if form.eta:
        return KAPPA_ATOL_LOG
    if form.source == "critical":
        return 0.1 * max(1, form.n - 1)
    return KAPPA_ATOL_HEAVY if heavy else KAPPA_ATOL


def judge(form: AsymptoteForm, fit: GrowthFit, heavy: bool = False) -> tuple[bool, dict]:
    errs = {}
    ok = True
    if "rho" in form.free:
        err = abs(fit.rho - form.rho)
        tol = RHO_RTOL * abs(form.rho) if form.rho != 0 else RHO_ATOL
        errs["rho"] = {"error": err, "tol": tol}
        ok &= err <= tol
    if "kappa" in form.free:
        err = abs(fit.kappa - form.kappa)
        tol = _kappa_tol(form, heavy)
        errs["kappa"] = {"error": err, "tol": tol}
        ok &= err <= tol
    if "eta" in form.free:
        err = abs(fit.eta - form.eta)
        same_sign = np.sign(fit.eta) == np.sign(form.eta)
        errs["eta"] = {"error": err, "tol": ETA_ATOL, "sign_ok": bool(same_sign)}
        ok &= bool(same_sign) and err <= ETA_ATOL
    return bool(ok), errs


def fit_window(form: AsymptoteForm, horizon: float, window=None) -> tuple:
    lo, hi = window if window is not None else (horizon / 10.0, horizon)
    if form.eta or "eta" in form.free:
        lo = max(lo, LOG_WINDOW_START)
    if hi / lo < 10.0 * (1 - 1e-12):
        raise WindowTooShort(f"fit window [{lo:g}, {hi:g}] spans less than one decade")
    return lo, hi


def validate_regime(trajectories, report: RegimeReport, window=None, site=None, heavy: bool | None = None) -> list:
    """Fit each trajectory with its predicted form's free exponents and judge the result."""
    heavy = report.alpha is not None if heavy is None else heavy
    out = []
    for traj in trajectories:
        if not isinstance(traj, MomentTrajectory):
            raise TypeError("expected MomentTrajectory objects")
        form = predicted_asymptote(report, traj.order, traj.variant)
        lo, hi = fit_window(form, float(traj.times[-1]), window)
        pinned = {k: getattr(form, k) for k in ("rho", "kappa", "eta") if k not in form.free}
        fit = fit_growth(traj, site=site, window=(lo, hi), free=form.free, pinned=pinned)
        ok, errs = judge(form, fit, heavy)
        out.append(Verdict(traj.order, traj.variant, form, fit, ok, errs))
    return out
