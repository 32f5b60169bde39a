"""Exact event-driven simulation of the particle system and empirical moments.

Every particle carries a Poisson clock of rate R = q + b0 + B, where
B = sum_{n>=2} b_n is the branching rate at the source (uniformization).
When a clock rings the particle jumps with weight q, dies with weight b0,
and, if it sits at the origin, splits into n particles with weight b_n;
otherwise nothing happens.  This reproduces the rates of the model exactly.

Each replica seeds numba's generator from its own 32-bit word drawn from
``numpy.random.SeedSequence(seed)``, so results do not depend on the number
of threads or on scheduling.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .branching_law import OffspringLaw
from .errors import EventCapExceeded, PopulationCapExceeded, SimulationTruncated, WrongRegime
from .walk_kernel import WalkKernel

OK = 0
POP_CAP = 1
EVENT_CAP = 2


def _tail_cube(d: int, cutoff: int) -> int:
    # jumps with |z|_inf <= K are tabulated; larger ones go through the tail sampler
    return {1: cutoff, 2: min(cutoff, 32)}.get(d, min(cutoff, 8))


@dataclass(frozen=True)
class JumpTable:
    """Tabulated jumps (CDF over ``disp``) plus the analytic tail of a heavy kernel."""

    disp: np.ndarray  # (J, d) int64
    cdf: np.ndarray  # (J,) cumulative, last entry = tabulated mass / q
    tail_prob: float  # probability that a jump falls outside the table
    cube: int  # K, tail shells are |z|_inf >= K + 1
    alpha: float
    tail_bound: float  # max over k > K of h_k / P(k), see _sample_tail


def face_count(d: int, k: int) -> int:
    # points of the shell |z|_inf = k counted once per face they lie on
    return 2 * d * (2 * k + 1) ** (d - 1)


def _shell_ratio(d: int, alpha: float, k: int) -> float:
    # h_k / P(k): shell weight M_k k^-(d+alpha) over the floor-Pareto proposal mass
    prop = (k**-alpha - (k + 1) ** -alpha) / alpha
    return face_count(d, k) * k ** -(d + alpha) / prop


def jump_table(kernel: WalkKernel) -> JumpTable:
    d = kernel.dimension
    q = kernel.total_rate
    if not kernel.is_heavy:
        disp = np.asarray(kernel.support, dtype=np.int64).reshape(-1, d)
        w = np.asarray(kernel.rates, dtype=float)
        cdf = np.cumsum(w) / q
        cdf[-1] = 1.0
        return JumpTable(disp, cdf, 0.0, 0, 1.0, 1.0)
    K = _tail_cube(d, kernel.cutoff or 64)
    g = np.arange(-K, K + 1)
    pts = np.stack(np.meshgrid(*([g] * d), indexing="ij"), axis=-1).reshape(-1, d)
    pts = pts[np.any(pts != 0, axis=1)]
    w = kernel.intensity_array(pts)
    inner = math.fsum(w)
    tail = max(0.0, 1.0 - inner / q)
    cdf = np.cumsum(w) / q
    return JumpTable(
        pts.astype(np.int64), cdf, tail, K, float(kernel.alpha), _shell_ratio(d, kernel.alpha, K + 1)
    )


@nb.njit(cache=True)
def _sample_tail(d, K, alpha, bound, out):
    """Exact draw of z with P(z) proportional to |z|^-(d+alpha) over |z|_inf > K."""
    while True:
        # shell k from the floor of a Pareto variable, thinned to M_k k^-(d+alpha)
        y = (K + 1) * (1.0 - np.random.random()) ** (-1.0 / alpha)
        if y > 9.0e18:
            continue
        k = int(math.floor(y))
        prop = (k ** (-alpha) - (k + 1.0) ** (-alpha)) / alpha
        # the face draw below reaches each shell point with probability 1/M_k
        mk = 2.0 * d * (2.0 * k + 1.0) ** (d - 1)
        if np.random.random() * bound > mk * k ** (-(d + alpha)) / prop:
            continue
        # uniform point of the shell: a face, then uniform remaining coordinates,
        # with 1/multiplicity correction for edges and corners
        face = np.random.randint(0, d)
        mult = 0
        r2 = 0.0
        for i in range(d):
            if i == face:
                out[i] = k if np.random.random() < 0.5 else -k
            else:
                out[i] = np.random.randint(-k, k + 1)
            if abs(out[i]) == k:
                mult += 1
            r2 += float(out[i]) * float(out[i])
        if np.random.random() * mult > 1.0:
            continue
        if np.random.random() < (k * k / r2) ** (0.5 * (d + alpha)):
            return


@nb.njit(cache=True)
def _run_replica(
    seed,
    d,
    q,
    b0,
    branch_cdf,
    branch_sizes,
    bsum,
    disp,
    cdf,
    tail_prob,
    cube,
    alpha,
    tail_bound,
    checkpoints,
    window,
    max_population,
    max_events,
    totals,
    local,
):
    np.random.seed(seed)
    cap = 64
    pos = np.zeros((cap, d), dtype=np.int64)
    n = 1
    t = 0.0
    events = 0
    R = q + b0 + bsum
    side = 2 * window + 1
    z = np.zeros(d, dtype=np.int64)
    k = 0
    nchk = checkpoints.shape[0]
    status = 0
    while k < nchk:
        if n == 0:
            t = np.inf
        else:
            t += np.random.exponential(1.0 / (n * R))
        while k < nchk and checkpoints[k] < t:
            totals[k] = n
            for i in range(n):
                inside = True
                idx = 0
                for j in range(d):
                    c = pos[i, j]
                    if c < -window or c > window:
                        inside = False
                        break
                    idx = idx * side + (c + window)
                if inside:
                    local[k, idx] += 1.0
            k += 1
        if k >= nchk:
            break
        events += 1
        if events > max_events:
            status = 2
            break
        i = np.random.randint(0, n)
        u = np.random.random() * R
        if u < q:
            if tail_prob > 0.0 and np.random.random() < tail_prob:
                _sample_tail(d, cube, alpha, tail_bound, z)
                for j in range(d):
                    pos[i, j] += z[j]
            else:
                v = np.random.random() * cdf[cdf.shape[0] - 1]
                m = np.searchsorted(cdf, v, side="right")
                if m >= cdf.shape[0]:
                    m = cdf.shape[0] - 1
                for j in range(d):
                    pos[i, j] += disp[m, j]
        elif u < q + b0:
            n -= 1
            for j in range(d):
                pos[i, j] = pos[n, j]
        else:
            at_origin = True
            for j in range(d):
                if pos[i, j] != 0:
                    at_origin = False
                    break
            if not at_origin:
                continue
            v = (u - q - b0)
            m = np.searchsorted(branch_cdf, v, side="right")
            if m >= branch_cdf.shape[0]:
                m = branch_cdf.shape[0] - 1
            extra = branch_sizes[m] - 1
            if n + extra > max_population:
                status = 1
                break
            if n + extra > cap:
                while cap < n + extra:
                    cap *= 2
                grown = np.zeros((cap, d), dtype=np.int64)
                grown[:n] = pos[:n]
                pos = grown
            for e in range(extra):
                for j in range(d):
                    pos[n + e, j] = 0
            n += extra
    return status, events


@nb.njit(parallel=True, cache=True)
def _run_batch(
    seeds, d, q, b0, branch_cdf, branch_sizes, bsum, disp, cdf, tail_prob, cube, alpha, tail_bound,
    checkpoints, window, max_population, max_events, totals, local, status, events,
):
    for r in nb.prange(seeds.shape[0]):
        st, ev = _run_replica(
            seeds[r], d, q, b0, branch_cdf, branch_sizes, bsum, disp, cdf, tail_prob, cube, alpha,
            tail_bound, checkpoints, window, max_population, max_events, totals[r], local[r],
        )
        status[r] = st
        events[r] = ev


@dataclass
class Snapshots:
    """Replica-level output: mu(t) and mu(t, y) on the window |y|_inf <= W."""

    checkpoints: np.ndarray  # (K,)
    sites: np.ndarray  # (S, d) window sites in C order
    totals: np.ndarray  # (R, K)
    local: np.ndarray  # (R, K, S)
    status: np.ndarray  # (R,) 0 ok, 1 population cap, 2 event cap
    events: np.ndarray  # (R,)
    seed: int = 0

    @property
    def replicas(self) -> int:
        return self.totals.shape[0]

    def valid(self) -> np.ndarray:
        return self.status == OK

    def column(self, site) -> int:
        site = np.asarray(site, dtype=int).reshape(1, -1)
        hits = np.flatnonzero(np.all(self.sites == site, axis=1))
        if hits.size == 0:
            raise KeyError(f"site {tuple(site[0])} is outside the tracked window")
        return int(hits[0])


def _window_sites(d: int, window: int) -> np.ndarray:
    g = np.arange(-window, window + 1)
    return np.stack(np.meshgrid(*([g] * d), indexing="ij"), axis=-1).reshape(-1, d)


def _branch_tables(law: OffspringLaw):
    sizes = np.array([n for n in range(2, len(law.b)) if law.b[n] > 0], dtype=np.int64)
    rates = np.array([law.b[n] for n in sizes], dtype=float)
    if sizes.size == 0:
        return np.array([1.0]), np.array([1], dtype=np.int64), 0.0
    return np.cumsum(rates), sizes, float(rates.sum())


def replica_seeds(seed: int, replicas: int) -> np.ndarray:
    return np.random.SeedSequence(int(seed)).generate_state(int(replicas), dtype=np.uint32).astype(np.int64)


def resolve_threads(threads: int | None = None) -> int:
    if threads is None:
        env = os.environ.get("BRWLAB_THREADS")
        threads = int(env) if env else nb.config.NUMBA_NUM_THREADS
    return max(1, min(int(threads), nb.config.NUMBA_NUM_THREADS))


def simulate(
    kernel: WalkKernel,
    law: OffspringLaw,
    checkpoints,
    replicas: int,
    seed: int = 0,
    window: int = 2,
    max_population: int = 1_000_000,
    max_events: int = 100_000_000,
    threads: int | None = None,
    first_replica: int = 0,
) -> Snapshots:
    """Run ``replicas`` independent copies started from one particle at the origin."""
    if max_population <= 0 or max_events <= 0:
        raise ValueError("caps must be positive")
    chk = np.asarray(sorted(float(c) for c in checkpoints), dtype=float)
    if chk.size == 0 or chk[0] < 0:
        raise ValueError("need at least one checkpoint >= 0")
    d = kernel.dimension
    table = jump_table(kernel)
    bcdf, bsizes, bsum = _branch_tables(law)
    sites = _window_sites(d, window)
    seeds = replica_seeds(seed, first_replica + replicas)[first_replica:]
    totals = np.zeros((replicas, chk.size))
    local = np.zeros((replicas, chk.size, sites.shape[0]))
    status = np.zeros(replicas, dtype=np.int64)
    events = np.zeros(replicas, dtype=np.int64)
    prev = nb.get_num_threads()
    nb.set_num_threads(resolve_threads(threads))
    try:
        _run_batch(
            seeds, d, float(kernel.total_rate), float(law.death_rate), bcdf, bsizes, bsum,
            table.disp, table.cdf, table.tail_prob, table.cube, table.alpha, table.tail_bound,
            chk, int(window), int(max_population), int(max_events), totals, local, status, events,
        )
    finally:
        nb.set_num_threads(prev)
    return Snapshots(chk, sites, totals, local, status, events, seed=int(seed))


def simulate_replica(config, horizon=None, checkpoints=None, seed=None, caps=None, replica: int = 0) -> Snapshots:
    """Single replica; raises PopulationCapExceeded/EventCapExceeded with the partial data attached."""
    mc = config.montecarlo
    horizon = config.horizon if horizon is None else horizon
    chk = list(checkpoints) if checkpoints is not None else sorted(set(config.checkpoints) | {horizon})
    if any(c > horizon for c in chk):
        raise ValueError("checkpoints must not exceed the horizon")
    caps = caps or {}
    snap = simulate(
        config.kernel, config.law, chk, 1,
        seed=mc.seed if seed is None else seed, window=mc.window,
        max_population=caps.get("max_population", mc.max_population),
        max_events=caps.get("max_events", mc.max_events),
        threads=1, first_replica=replica,
    )
    if snap.status[0] == POP_CAP:
        raise PopulationCapExceeded("population cap reached", partial=snap)
    if snap.status[0] == EVENT_CAP:
        raise EventCapExceeded("event cap reached", partial=snap)
    return snap


@dataclass
class SimulationSummary:
    replicas: int
    truncated: int
    checkpoints: np.ndarray
    sites: np.ndarray
    total_mean: np.ndarray  # (n_max, K)
    total_se: np.ndarray
    local_mean: np.ndarray  # (n_max, K, S)
    local_se: np.ndarray
    extinct: np.ndarray  # (K,) fraction with mu(t) = 0
    metadata: dict = field(default_factory=dict)

    def total(self, n: int, t: float):
        k = self._k(t)
        return float(self.total_mean[n - 1, k]), float(self.total_se[n - 1, k])

    def local_at(self, n: int, t: float, site):
        k = self._k(t)
        s = int(np.flatnonzero(np.all(self.sites == np.asarray(site).reshape(1, -1), axis=1))[0])
        return float(self.local_mean[n - 1, k, s]), float(self.local_se[n - 1, k, s])

    def _k(self, t):
        k = int(np.argmin(np.abs(self.checkpoints - t)))
        if not math.isclose(self.checkpoints[k], t, rel_tol=1e-12, abs_tol=1e-12):
            raise KeyError(f"no checkpoint at t={t}")
        return k

    def to_dict(self) -> dict:
        out = {
            "replicas": self.replicas,
            "truncated": self.truncated,
            "checkpoints": self.checkpoints.tolist(),
            "extinct_fraction": self.extinct.tolist(),
            "total": [],
            "local": [],
            "metadata": self.metadata,
        }
        for n in range(self.total_mean.shape[0]):
            out["total"].append(
                {"n": n + 1, "mean": self.total_mean[n].tolist(), "se": self.total_se[n].tolist()}
            )
            for s, site in enumerate(self.sites):
                out["local"].append(
                    {
                        "n": n + 1,
                        "site": [int(c) for c in site],
                        "mean": self.local_mean[n, :, s].tolist(),
                        "se": self.local_se[n, :, s].tolist(),
                    }
                )
        return out


def _mean_se(x: np.ndarray):
    """Replica mean and standard error along axis 0."""
    R = x.shape[0]
    mean = x.mean(axis=0)
    se = x.std(axis=0, ddof=1) / math.sqrt(R)
    return mean, se


def estimate_moments(snapshots: Snapshots, n_max: int = 2) -> SimulationSummary:
    """Replica means of mu^n and their standard errors; truncated replicas are dropped."""
    ok = snapshots.valid()
    R = int(ok.sum())
    if R < 2:
        raise SimulationTruncated(f"only {R} untruncated replicas")
    tot = snapshots.totals[ok]
    loc = snapshots.local[ok]
    tm, ts, lm, ls = [], [], [], []
    for n in range(1, n_max + 1):
        m, s = _mean_se(tot**n)
        tm.append(m)
        ts.append(s)
        m, s = _mean_se(loc**n)
        lm.append(m)
        ls.append(s)
    return SimulationSummary(
        replicas=R,
        truncated=int((~ok).sum()),
        checkpoints=snapshots.checkpoints.copy(),
        sites=snapshots.sites.copy(),
        total_mean=np.array(tm),
        total_se=np.array(ts),
        local_mean=np.array(lm),
        local_se=np.array(ls),
        extinct=(tot == 0).mean(axis=0),
        metadata={"seed": snapshots.seed, "events_mean": float(snapshots.events[ok].mean())},
    )


@dataclass
class LimitSample:
    times: np.ndarray
    lambda_E: float
    total: np.ndarray  # (R, K) mu(t) exp(-lambda_E t)
    local: np.ndarray  # (R, K, S)
    sites: np.ndarray

    def summary(self) -> dict:
        R = self.total.shape[0]
        out = []
        for k, t in enumerate(self.times):
            x = self.total[:, k]
            out.append(
                {
                    "t": float(t),
                    "mean": float(x.mean()),
                    "se": float(x.std(ddof=1) / math.sqrt(R)),
                    "variance": float(x.var(ddof=1)),
                    "mass_at_zero": float(np.mean(x == 0)),
                }
            )
        return {"lambda_E": self.lambda_E, "replicas": R, "times": out}

    def psi_ratio(self, site, k: int):
        """Ratio of local to total rescaled means at checkpoint k with a delta-method SE."""
        s = int(np.flatnonzero(np.all(self.sites == np.asarray(site).reshape(1, -1), axis=1))[0])
        a = self.local[:, k, s]
        b = self.total[:, k]
        R = a.size
        ma, mb = a.mean(), b.mean()
        ratio = ma / mb
        resid = a - ratio * b
        se = resid.std(ddof=1) / (math.sqrt(R) * mb)
        return float(ratio), float(se)


def sample_limit_law(config, t_large, replicas=None, seed=None, times=None, threads=None) -> LimitSample:
    """Samples of mu(t) exp(-lambda_E t) (and of mu(t, y) exp(-lambda_E t)) at ``times``."""
    from .spectral import SUPERCRITICAL, classify

    rep = classify(config.kernel, config.law)
    if rep.regime != SUPERCRITICAL:
        raise WrongRegime(f"limit law needs a supercritical model, got {rep.regime}")
    mc = config.montecarlo
    times = np.asarray(sorted(set(times or []) | {float(t_large)}), dtype=float)
    snap = simulate(
        config.kernel, config.law, times, mc.replicas if replicas is None else replicas,
        seed=mc.seed if seed is None else seed, window=mc.window,
        max_population=mc.max_population, max_events=mc.max_events, threads=threads,
    )
    ok = snap.valid()
    if not ok.any():
        raise SimulationTruncated("all replicas truncated")
    scale = np.exp(-rep.lambda_E * times)
    return LimitSample(
        times=times,
        lambda_E=rep.lambda_E,
        total=snap.totals[ok] * scale,
        local=snap.local[ok] * scale[None, :, None],
        sites=snap.sites,
    )
