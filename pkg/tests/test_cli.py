import json
from pathlib import Path

import pytest

from brwlab.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_NUMERIC, EXIT_OK, EXIT_TRUNCATED, main
from brwlab.config import config_hash, load_config

ALL = [
    "purewalk", "supercritical", "critical", "subcritical_eigen",
    "subcritical_boundary", "subcritical_weak", "heavy_weak",
]
QUICK = ["purewalk", "supercritical", "critical", "subcritical_eigen"]
EXPECTED_REGIME = {
    "purewalk": "PureWalk",
    "supercritical": "Supercritical",
    "critical": "Critical",
    "subcritical_eigen": "SubcriticalEigen",
    "subcritical_boundary": "SubcriticalBoundary",
    "subcritical_weak": "SubcriticalWeak",
    "heavy_weak": "SubcriticalWeak",
}


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    return code, capsys.readouterr().out


def write(tmp_path, name, obj) -> Path:
    path = tmp_path / name
    path.write_text(json.dumps(obj))
    return path


@pytest.mark.parametrize("name", ALL)
def test_classify_fixtures(capsys, tmp_path, config_dir, name):
    cfg = config_dir / f"{name}.json"
    code, out = run(capsys, "classify", "--config", cfg, "--out", tmp_path)
    assert code == EXIT_OK
    doc = json.loads(out)
    assert doc["classification"]["regime"] == EXPECTED_REGIME[name]
    h = config_hash(load_config(cfg))
    assert doc["config_hash"] == h
    saved = json.loads((tmp_path / h / "report.json").read_text())
    assert saved == doc
    manifest = json.loads((tmp_path / h / "manifest.json").read_text())
    assert manifest["command"] == "classify" and manifest["config_hash"] == h
    assert {"numpy", "scipy", "numba", "python"} <= set(manifest["versions"])


@pytest.mark.parametrize("name", QUICK)
def test_validate_quick_fixtures(capsys, tmp_path, config_dir, name):
    code, out = run(capsys, "validate", "--config", config_dir / f"{name}.json", "--out", tmp_path)
    assert code == EXIT_OK, out
    lines = out.strip().splitlines()
    assert lines and all(line.startswith("PASS ") for line in lines)
    (root,) = tmp_path.iterdir()
    report = json.loads((root / "report.json").read_text())
    assert report["passed"] is True
    assert all(v["verdict"] == "PASS" for v in report["verdicts"].values())
    assert not list(root.rglob("*.tmp"))


def test_validate_fail_exit_code(capsys, tmp_path):
    cfg = write(tmp_path, "c.json", {
        "dimension": 1, "kernel": {"type": "simple"},
        "offspring": {"b": {"2": 1.0}, "death_rate": {"lambda0_offset": 0.0}},
        "truncation": 32, "horizon": 20, "fit_window": [1, 20], "moments": {"n_max": 3},
    })
    code, out = run(capsys, "validate", "--config", cfg, "--out", tmp_path / "o")
    assert code == EXIT_FAIL
    assert "FAIL critical/n=3/local" in out


def test_moments_outputs_and_rerun_identical(capsys, tmp_path, config_dir):
    cfg = config_dir / "supercritical.json"
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(capsys, "moments", "--config", cfg, "--out", a, "--n", 2)[0] == EXIT_OK
    assert run(capsys, "moments", "--config", cfg, "--out", b, "--n", 2)[0] == EXIT_OK
    files_a = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    assert files_a == files_b
    names = {p.name for p in files_a}
    assert {"m1_local.csv", "m2_local.csv", "m1_local.json", "manifest.json"} <= names
    for rel in files_a:
        if rel.name == "manifest.json":
            ma, mb = (json.loads((r / rel).read_text()) for r in (a, b))
            for m in (ma, mb):
                m.pop("wall_time")
                m["config"].pop("output")
            assert ma == mb
        else:
            assert (a / rel).read_bytes() == (b / rel).read_bytes()


def test_site_and_variant_flags(capsys, tmp_path, config_dir):
    cfg = config_dir / "subcritical_eigen.json"
    code, out = run(capsys, "moments", "--config", cfg, "--out", tmp_path, "--site", "2", "--variant", "local", "--n", 1)
    assert code == EXIT_OK
    (root,) = tmp_path.iterdir()
    side = json.loads((root / "trajectories" / "m1_local.json").read_text())
    assert side["target"] == [2]
    assert not (root / "trajectories" / "m1_total.csv").exists()
    assert (root / "trajectories" / "m1_local.csv").read_text().startswith("t,")


def test_simulate_seed_override(capsys, tmp_path, config_dir):
    cfg = config_dir / "supercritical.json"
    args = ["simulate", "--config", cfg, "--replicas", 200, "--threads", 2]
    code, _ = run(capsys, *args, "--out", tmp_path / "a", "--seed", 5)
    assert code == EXIT_OK
    run(capsys, *args, "--out", tmp_path / "b", "--seed", 5)
    run(capsys, *args, "--out", tmp_path / "c", "--seed", 6)
    read = lambda r: next(r.iterdir()).joinpath("summary.json").read_text()  # noqa: E731
    assert read(tmp_path / "a") == read(tmp_path / "b")
    assert read(tmp_path / "a") != read(tmp_path / "c")
    assert next((tmp_path / "a").iterdir()).name != next((tmp_path / "c").iterdir()).name


def test_config_errors(capsys, tmp_path, config_dir):
    code, out = run(capsys, "classify", "--config", tmp_path / "missing.json")
    assert code == EXIT_CONFIG and json.loads(out)["error"] == "config"
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run(capsys, "classify", "--config", bad)[0] == EXIT_CONFIG
    neg = write(tmp_path, "neg.json", {"dimension": 1, "kernel": {"type": "simple"}, "offspring": {"b": {"0": -1}}})
    assert run(capsys, "classify", "--config", neg)[0] == EXIT_CONFIG
    code, _ = run(capsys, "classify", "--config", config_dir / "critical.json", "--out", tmp_path, "--site", "1;2")
    assert code == EXIT_CONFIG
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 2


def test_numeric_failure(capsys, tmp_path):
    cfg = write(tmp_path, "c.json", {
        "dimension": 1, "kernel": {"type": "simple"}, "offspring": {"b": {"0": 0.1, "2": 0.2}},
        "truncation": 3, "horizon": 10,
    })
    code, out = run(capsys, "moments", "--config", cfg, "--out", tmp_path / "o")
    assert code == EXIT_NUMERIC
    doc = json.loads(out)
    assert doc["error"] == "numerical" and doc["type"] == "TruncationTooSmall"


def test_all_replicas_truncated(capsys, tmp_path):
    cfg = write(tmp_path, "c.json", {
        "dimension": 1, "kernel": {"type": "simple"}, "offspring": {"b": {"2": 5.0}},
        "truncation": 16, "horizon": 10, "montecarlo": {"replicas": 20, "seed": 1, "max_population": 50},
    })
    code, out = run(capsys, "simulate", "--config", cfg, "--out", tmp_path / "o")
    assert code == EXIT_TRUNCATED
    assert json.loads(out)["error"] == "truncated"
