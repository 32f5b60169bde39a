import math

import numba as nb
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brwlab.branching_law import offspring_law
from brwlab.config import ModelConfig, MonteCarloSettings
from brwlab.errors import EventCapExceeded, PopulationCapExceeded, SimulationTruncated, WrongRegime
from brwlab.montecarlo import (
    EVENT_CAP,
    OK,
    POP_CAP,
    Snapshots,
    _sample_tail,
    _shell_ratio,
    estimate_moments,
    jump_table,
    sample_limit_law,
    simulate,
    simulate_replica,
)
from brwlab.walk_kernel import heavy_tail_kernel, simple_random_walk, transition_probability

SRW1 = simple_random_walk(1)


def snapshots(totals, local=None):
    totals = np.asarray(totals, dtype=float).reshape(-1, 1)
    R = totals.shape[0]
    local = totals[:, :, None] if local is None else np.asarray(local, dtype=float).reshape(R, 1, 1)
    return Snapshots(
        checkpoints=np.array([1.0]),
        sites=np.zeros((1, 1), dtype=np.int64),
        totals=totals,
        local=local,
        status=np.zeros(R, dtype=np.int64),
        events=np.zeros(R, dtype=np.int64),
    )


# -- estimators on hand-built replicas


def test_estimator_constant_replicas():
    s = estimate_moments(snapshots([3.0] * 5), n_max=2)
    assert s.total(1, 1.0) == (3.0, 0.0)
    assert s.total(2, 1.0) == (9.0, 0.0)


def test_estimator_two_replicas():
    s = estimate_moments(snapshots([0.0, 2.0]), n_max=2)
    assert s.total(1, 1.0) == pytest.approx((1.0, 1.0))
    assert s.total(2, 1.0) == pytest.approx((2.0, 2.0))
    assert s.extinct[0] == 0.5


def test_estimator_drops_truncated():
    snap = snapshots([1.0, 5.0, 100.0])
    snap.status[2] = POP_CAP
    s = estimate_moments(snap, n_max=1)
    assert s.replicas == 2 and s.truncated == 1
    assert s.total(1, 1.0)[0] == 3.0
    snap.status[1] = EVENT_CAP
    with pytest.raises(SimulationTruncated):
        estimate_moments(snap)


# -- pure walk and bookkeeping


def test_pure_walk_population_is_one():
    snap = simulate(SRW1, offspring_law({0: 0.0}), [0.0, 1.0, 3.0], 200, seed=1, window=3)
    assert np.all(snap.totals == 1.0)
    assert np.all(snap.status == OK)
    assert np.all(snap.local[:, 0, snap.column((0,))] == 1.0)
    assert np.all(snap.local.sum(axis=2) <= 1.0)


def test_pure_death_survival():
    snap = simulate(SRW1, offspring_law({0: 0.5}), [2.0], 20000, seed=2)
    s = estimate_moments(snap, n_max=1)
    m, se = s.total(1, 2.0)
    assert abs(m - math.exp(-1.0)) < 4 * se


def test_pure_walk_site_frequencies():
    snap = simulate(SRW1, offspring_law({0: 0.0}), [1.5], 20000, seed=3, window=2)
    s = estimate_moments(snap, n_max=1)
    for y in (0, 1, 2):
        m, se = s.local_at(1, 1.5, (y,))
        assert abs(m - transition_probability(SRW1, 1.5, (y,))) < 4 * se


def test_branching_bookkeeping():
    law = offspring_law({0: 0.0, 2: 1.0, 3: 0.5})
    snap = simulate(simple_random_walk(2), law, [0.5, 1.0, 2.0], 300, seed=4, window=40)
    assert np.all(snap.status == OK)
    assert np.all(np.diff(snap.totals, axis=1) >= 0)
    assert np.all(snap.totals == np.round(snap.totals))
    # window covers every reachable site with overwhelming probability
    assert np.allclose(snap.local.sum(axis=2), snap.totals)


# -- determinism


def test_same_seed_same_output():
    law = offspring_law({0: 0.1, 2: 1.0})
    a = simulate(SRW1, law, [1.0, 3.0], 64, seed=9)
    b = simulate(SRW1, law, [1.0, 3.0], 64, seed=9)
    c = simulate(SRW1, law, [1.0, 3.0], 64, seed=10)
    assert np.array_equal(a.totals, b.totals) and np.array_equal(a.local, b.local)
    assert not np.array_equal(a.totals, c.totals)


def test_thread_count_does_not_matter():
    law = offspring_law({0: 0.1, 2: 1.0})
    one = simulate(SRW1, law, [1.0, 3.0], 64, seed=5, threads=1)
    many = simulate(SRW1, law, [1.0, 3.0], 64, seed=5, threads=4)
    assert np.array_equal(one.totals, many.totals)
    assert np.array_equal(one.local, many.local)
    assert np.array_equal(one.events, many.events)


def test_replica_offset():
    law = offspring_law({0: 0.1, 2: 1.0})
    full = simulate(SRW1, law, [2.0], 10, seed=6)
    tail = simulate(SRW1, law, [2.0], 4, seed=6, first_replica=6)
    assert np.array_equal(full.totals[6:], tail.totals)


# -- caps


def config(law, **mc):
    return ModelConfig(
        kernel=SRW1, law=offspring_law(law), horizon=10.0, checkpoints=(1.0,),
        montecarlo=MonteCarloSettings(**{"replicas": 10, "seed": 0, **mc}),
    )


def test_population_cap():
    cfg = config({0: 0.0, 2: 5.0}, max_population=50)
    with pytest.raises(PopulationCapExceeded) as info:
        simulate_replica(cfg)
    assert info.value.partial.status[0] == POP_CAP


def test_event_cap():
    cfg = config({0: 0.0}, max_events=5)
    with pytest.raises(EventCapExceeded) as info:
        simulate_replica(cfg)
    assert info.value.partial.status[0] == EVENT_CAP


def test_caps_flag_replicas_in_batch():
    snap = simulate(SRW1, offspring_law({0: 0.0, 2: 5.0}), [10.0], 8, seed=0, max_population=50)
    assert np.all(snap.status == POP_CAP)
    with pytest.raises(SimulationTruncated):
        estimate_moments(snap)


# -- heavy tail sampler


@pytest.mark.parametrize("d", [1, 2, 3])
@pytest.mark.parametrize("alpha", [0.3, 1.0, 1.9])
def test_shell_ratio_decreasing(d, alpha):
    r = [_shell_ratio(d, alpha, k) for k in range(1, 400)]
    assert np.all(np.diff(r) <= 1e-12 * np.abs(r[1:]))


@nb.njit(cache=True)
def _draw_tail(seed, n, d, K, alpha, bound):
    np.random.seed(seed)
    out = np.zeros((n, d), dtype=np.int64)
    z = np.zeros(d, dtype=np.int64)
    for i in range(n):
        _sample_tail(d, K, alpha, bound, z)
        out[i] = z
    return out


@pytest.mark.parametrize("d,alpha", [(1, 0.5), (2, 1.0), (3, 1.5)])
def test_tail_sampler_distribution(d, alpha):
    K = 2
    draws = _draw_tail(7, 200000, d, K, alpha, _shell_ratio(d, alpha, K + 1))
    sup = np.abs(draws).max(axis=1)
    assert sup.min() == K + 1
    # shell probabilities relative to the first few shells, against exact lattice sums
    shells = range(K + 1, K + 5)
    weight = []
    for k in shells:
        g = np.arange(-k, k + 1)
        pts = np.stack(np.meshgrid(*([g] * d), indexing="ij"), axis=-1).reshape(-1, d)
        pts = pts[np.abs(pts).max(axis=1) == k]
        weight.append(np.sum(np.linalg.norm(pts, axis=1) ** -(d + alpha)))
    weight = np.array(weight) / np.sum(weight)
    counts = np.array([np.sum(sup == k) for k in shells])
    freq = counts / counts.sum()
    se = np.sqrt(weight * (1 - weight) / counts.sum())
    assert np.all(np.abs(freq - weight) < 5 * se)
    # within a shell, points are weighted by |z|^-(d+alpha): compare face centre to corner in d=2
    if d == 2:
        k = K + 1
        shell = draws[sup == k]
        centre = np.sum(np.all(shell == [k, 0], axis=1))
        corner = np.sum(np.all(shell == [k, k], axis=1))
        expected = 2 ** (0.5 * (d + alpha))
        assert centre / corner == pytest.approx(expected, rel=0.15)
    # symmetry of each coordinate
    pos, neg = np.mean(draws[:, 0] > 0), np.mean(draws[:, 0] < 0)
    assert abs(pos - neg) < 5 * math.sqrt((pos + neg) / draws.shape[0])


def test_heavy_pure_walk_matches_quadrature():
    k = heavy_tail_kernel(1, 0.7)
    assert jump_table(k).tail_prob > 0
    snap = simulate(k, offspring_law({0: 0.0}), [1.0], 20000, seed=8, window=3)
    s = estimate_moments(snap, n_max=1)
    for y in (0, 1, 3):
        m, se = s.local_at(1, 1.0, (y,))
        assert abs(m - transition_probability(k, 1.0, (y,))) < 4 * se


# -- limit law


def test_limit_law_requires_supercritical():
    with pytest.raises(WrongRegime):
        sample_limit_law(config({0: 0.5, 2: 0.2}), 5.0)


def test_limit_law_rescaled_mean_is_stable():
    cfg = config({0: 0.0, 2: 1.0}, replicas=4000, seed=12)
    lim = sample_limit_law(cfg, 4.0, times=[2.0])
    summ = lim.summary()
    assert summ["replicas"] == 4000
    a, b = summ["times"]
    assert abs(a["mean"] - b["mean"]) < 4 * math.hypot(a["se"], b["se"])
    r, se = lim.psi_ratio((0,), 1)
    assert 0 < r < 1 and se > 0


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_local_bounded_by_total(seed):
    snap = simulate(SRW1, offspring_law({0: 0.3, 2: 0.8}), [0.5, 1.5], 8, seed=seed, window=2)
    assert np.all(snap.local.sum(axis=2) <= snap.totals + 1e-12)
    assert np.all(snap.local >= 0)
