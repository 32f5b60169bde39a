"""Critical intensity, the isolated eigenvalue at the source and regime classification."""

from __future__ import annotations

from dataclasses import asdict, dataclass

from scipy.optimize import brentq

from .branching_law import OffspringLaw, beta_star, offspring_law
from .errors import BracketFailure
from .walk_kernel import WalkKernel, green, is_transient

PURE_WALK = "PureWalk"
SUPERCRITICAL = "Supercritical"
CRITICAL = "Critical"
SUBCRITICAL_EIGEN = "SubcriticalEigen"
SUBCRITICAL_BOUNDARY = "SubcriticalBoundary"
SUBCRITICAL_WEAK = "SubcriticalWeak"
REGIMES = (PURE_WALK, SUPERCRITICAL, CRITICAL, SUBCRITICAL_EIGEN, SUBCRITICAL_BOUNDARY, SUBCRITICAL_WEAK)

CRITICAL_RTOL = 1e-9
BOUNDARY_RTOL = 1e-9
ROOT_RESIDUAL = 1e-8


@dataclass(frozen=True)
class RegimeReport:
    regime: str
    beta_star: float
    beta_c: float
    death_rate: float
    lambda0: float | None
    lambda_E: float | None
    critical_tolerance: float
    dimension: int
    transient: bool
    alpha: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def beta_critical(kernel: WalkKernel) -> float:
    """beta_c = 1 / G_0(0, 0), and 0 for a recurrent walk."""
    if not is_transient(kernel):
        return 0.0
    return 1.0 / green(kernel, 0.0)


def _resolvent_gap(kernel: WalkKernel, bstar: float, lam: float) -> float:
    return bstar * green(kernel, lam) - 1.0


def lambda0(kernel: WalkKernel, bstar: float, beta_c: float | None = None) -> float | None:
    """Positive root of beta* G_lambda(0,0) = 1, or None when beta* <= beta_c.

    G_lambda(0,0) is strictly decreasing and bounded by 1/lambda, so the root
    is unique and lies in (0, beta*].
    """
    if bstar < 0:
        raise ValueError("beta* must be >= 0")
    if beta_c is None:
        beta_c = beta_critical(kernel)
    if bstar <= beta_c * (1.0 + BOUNDARY_RTOL) or bstar == 0.0:
        return None
    g0 = green(kernel, 0.0)
    if not bstar * g0 - 1.0 > 0.0:
        raise BracketFailure(f"beta* G_0(0,0) - 1 = {bstar * g0 - 1.0:.3g} <= 0 although beta* > beta_c")
    hi = bstar
    if _resolvent_gap(kernel, bstar, hi) > 0.0:
        raise BracketFailure("beta* G_beta*(0,0) > 1 contradicts G_lambda <= 1/lambda")
    # left end: the smallest lambda with a positive gap, found by halving
    lo = hi
    for _ in range(200):
        lo *= 0.5
        if lo < 1e-12:
            lo = 1e-12
        if _resolvent_gap(kernel, bstar, lo) > 0.0:
            break
        if lo == 1e-12:
            raise BracketFailure("no sign change of beta* G_lambda(0,0) - 1 on [1e-12, beta*]")
    root = brentq(lambda lam: _resolvent_gap(kernel, bstar, lam), lo, hi, xtol=1e-15, rtol=1e-15, maxiter=200)
    resid = _resolvent_gap(kernel, bstar, root)
    if abs(resid) >= ROOT_RESIDUAL:
        raise BracketFailure(f"root residual {resid:.3g} exceeds {ROOT_RESIDUAL:g}")
    return float(root)


def classify(
    kernel: WalkKernel,
    law: OffspringLaw,
    critical_tolerance: float | None = None,
) -> RegimeReport:
    bstar = beta_star(law)
    b0 = law.death_rate
    bc = beta_critical(kernel)
    lam0 = lam_e = None
    if bstar == 0.0:
        regime = PURE_WALK
    elif bc > 0 and abs(bstar - bc) <= BOUNDARY_RTOL * bc:
        regime = SUBCRITICAL_BOUNDARY
    elif bstar < bc:
        regime = SUBCRITICAL_WEAK
    else:
        lam0 = lambda0(kernel, bstar, bc)
        lam_e = lam0 - b0
        tol = CRITICAL_RTOL * max(1.0, lam0) if critical_tolerance is None else critical_tolerance
        if abs(lam_e) <= tol:
            regime = CRITICAL
        elif lam_e > 0:
            regime = SUPERCRITICAL
        else:
            regime = SUBCRITICAL_EIGEN
    if critical_tolerance is None:
        critical_tolerance = CRITICAL_RTOL * max(1.0, lam0 or 0.0)
    return RegimeReport(
        regime=regime,
        beta_star=bstar,
        beta_c=bc,
        death_rate=b0,
        lambda0=lam0,
        lambda_E=lam_e,
        critical_tolerance=critical_tolerance,
        dimension=kernel.dimension,
        transient=is_transient(kernel),
        alpha=kernel.alpha,
    )


def with_death_rate(law: OffspringLaw, b0: float) -> OffspringLaw:
    """Same reproduction intensities, different death rate."""
    b = {n: v for n, v in enumerate(law.b) if n > 1}
    b[0] = b0
    return offspring_law(b, n_max=law.n_max, g_order=law.g_order)


def critical_law(kernel: WalkKernel, law: OffspringLaw) -> OffspringLaw:
    """Set b_0 := lambda_0 so that lambda_E = 0 by construction."""
    lam0 = lambda0(kernel, beta_star(law))
    if lam0 is None:
        raise ValueError("no isolated eigenvalue: beta* <= beta_c")
    return with_death_rate(law, lam0)

