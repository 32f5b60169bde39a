import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brwlab.config import config_hash, load_config, parse_config, serialize
from brwlab.errors import ConfigError
from brwlab.spectral import lambda0
from brwlab.branching_law import beta_star

FIXTURES = [
    "purewalk",
    "supercritical",
    "critical",
    "subcritical_eigen",
    "subcritical_boundary",
    "subcritical_weak",
    "heavy_weak",
]


@pytest.mark.parametrize("name", FIXTURES)
def test_round_trip(config_dir, name):
    cfg = load_config(config_dir / f"{name}.json")
    again = parse_config(serialize(cfg))
    assert again == cfg
    assert serialize(again) == serialize(cfg)
    assert config_hash(again) == config_hash(cfg)


def test_hash_is_canonical():
    a = parse_config('{"dimension": 1, "kernel": {"type": "simple"}, "offspring": {"b": {"0": 0.5}}}')
    b = parse_config('{"offspring": {"b": {"0": 0.5}}, "kernel": {"type": "simple"}, "dimension": 1}')
    assert config_hash(a) == config_hash(b)
    assert len(config_hash(a)) == 16
    assert config_hash(a.with_(horizon=11.0)) != config_hash(a)
    assert config_hash(a.with_(output="elsewhere")) == config_hash(a)


def test_tolerances_are_decimal_strings():
    cfg = parse_config({"dimension": 1, "kernel": {"type": "simple"}, "tolerances": {"rtol": "1e-9"}})
    assert cfg.tol("rtol") == 1e-9
    assert cfg.to_dict()["tolerances"]["rtol"] == "1e-09"


def test_relative_death_rate():
    cfg = parse_config(
        {"dimension": 1, "kernel": {"type": "simple"}, "offspring": {"b": {"2": 1.0}, "death_rate": {"lambda0_offset": 0.2}}}
    )
    assert cfg.law.death_rate == pytest.approx(lambda0(cfg.kernel, 1.0) + 0.2)


def test_beta_star_factor(config_dir):
    cfg = load_config(config_dir / "subcritical_weak.json")
    from brwlab.spectral import beta_critical

    assert beta_star(cfg.law) == pytest.approx(0.5 * beta_critical(cfg.kernel), rel=1e-14)


@pytest.mark.parametrize(
    "bad",
    [
        "not json",
        "[]",
        {"kernel": {"type": "simple"}},
        {"dimension": 1, "kernel": {"type": "simple"}, "schema": "other/2"},
        {"dimension": 1, "kernel": {"type": "simple"}, "moments": {"variant": "both"}},
        {"dimension": 1, "kernel": {"type": "simple"}, "moments": {"site": [0, 0]}},
        {"dimension": 1, "kernel": {"type": "simple"}, "horizon": -1},
        {"dimension": 1, "kernel": {"type": "simple"}, "horizon": 5, "checkpoints": [6]},
        {"dimension": 1, "kernel": {"type": "simple"}, "tolerances": {"bogus": 1}},
        {"dimension": 1, "kernel": {"type": "heavy_tail", "alpha": 2.5}},
        {"dimension": 1, "kernel": {"type": "simple"}, "offspring": {"b": {"2": -1}}},
    ],
)
def test_invalid_configs(bad):
    with pytest.raises(ConfigError):
        parse_config(bad if isinstance(bad, str) else json.dumps(bad))


@settings(max_examples=30, deadline=None)
@given(
    b0=st.floats(0.0, 3.0),
    b2=st.floats(0.0, 3.0),
    horizon=st.floats(0.5, 100.0),
    seed=st.integers(0, 2**31),
    L=st.integers(1, 200),
)
def test_round_trip_property(b0, b2, horizon, seed, L):
    data = {
        "dimension": 2,
        "kernel": {"type": "simple"},
        "offspring": {"b": {"0": b0, "2": b2}},
        "horizon": horizon,
        "truncation": L,
        "montecarlo": {"seed": seed},
    }
    cfg = parse_config(data)
    assert parse_config(serialize(cfg)) == cfg
