"""Command line front-end: classify, moments, simulate, validate.

Exit codes: 0 success, 1 a validation verdict failed, 2 invalid config or
arguments, 3 numerical failure (an error JSON is printed), 4 every Monte
Carlo replica was truncated by a cap.
"""

from __future__ import annotations

import argparse
import json
import os
import platform
import sys
import tempfile
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .asymptotics import supercritical_diagnostics, validate_regime
from .config import ModelConfig, MonteCarloSettings, config_hash, load_config
from .errors import BRWError, ConfigError, NumericalError, SimulationTruncated, UnsupportedCombination
from .moment_solver import solve_moments
from .montecarlo import estimate_moments, resolve_threads, simulate
from .spectral import SUPERCRITICAL, classify

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_TRUNCATED = 4


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, default=_jsonable) + "\n"


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialise {type(x).__name__}")


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _parse_site(text: str, d: int) -> tuple:
    parts = [p for p in text.replace(",", ";").split(";") if p.strip()]
    try:
        site = tuple(int(p) for p in parts)
    except ValueError as exc:
        raise ConfigError(f"--site expects integers separated by ';', got {text!r}") from exc
    if len(site) != d:
        raise ConfigError(f"--site needs {d} coordinates, got {len(site)}")
    return site


def effective_config(args) -> ModelConfig:
    cfg = load_config(args.config)
    mc = cfg.montecarlo
    changes = {}
    if getattr(args, "seed", None) is not None or getattr(args, "replicas", None) is not None:
        changes["montecarlo"] = MonteCarloSettings(
            replicas=args.replicas if args.replicas is not None else mc.replicas,
            seed=args.seed if args.seed is not None else mc.seed,
            max_population=mc.max_population,
            max_events=mc.max_events,
            window=mc.window,
        )
    if getattr(args, "n", None) is not None:
        changes["n_max"] = args.n
    if getattr(args, "variant", None) is not None:
        changes["variant"] = args.variant
    if getattr(args, "site", None) is not None:
        changes["site"] = _parse_site(args.site, cfg.dimension)
    if getattr(args, "out", None) is not None:
        changes["output"] = args.out
    return cfg.with_(**changes) if changes else cfg


class Run:
    """Output directory out/<config-hash>/ and the manifest of one invocation."""

    def __init__(self, cfg: ModelConfig, command: str):
        self.cfg = cfg
        self.command = command
        self.hash = config_hash(cfg)
        self.root = Path(cfg.output) / self.hash
        self.started = time.perf_counter()

    def write(self, rel: str, text: str) -> Path:
        path = self.root / rel
        write_atomic(path, text)
        return path

    def finish(self, **extra) -> None:
        import numba
        import scipy

        manifest = {
            "command": self.command,
            "config_hash": self.hash,
            "config": self.cfg.to_dict(),
            "seed": self.cfg.montecarlo.seed,
            "versions": {
                "brwlab": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "numba": numba.__version__,
            },
            "wall_time": time.perf_counter() - self.started,
        }
        manifest.update(extra)
        self.write("manifest.json", _dump(manifest))


def cmd_classify(args) -> int:
    cfg = effective_config(args)
    run = Run(cfg, "classify")
    report = classify(cfg.kernel, cfg.law).to_dict()
    out = {"config_hash": run.hash, "classification": report}
    run.write("report.json", _dump(out))
    run.finish()
    sys.stdout.write(_dump(out))
    return EXIT_OK


def _variants(cfg: ModelConfig, args) -> list:
    v = getattr(args, "variant", None)
    return [v] if v else ["local", "total"]


def _solve(cfg: ModelConfig, variant: str):
    return solve_moments(cfg, n_max=cfg.n_max, horizon=cfg.horizon, variant=variant, site=cfg.target_site())


def _write_trajectories(run: Run, trajs) -> list:
    files = []
    for tr in trajs:
        stem = f"trajectories/m{tr.order}_{tr.variant}"
        run.write(stem + ".csv", tr.to_csv())
        side = {
            "config_hash": run.hash,
            "order": tr.order,
            "variant": tr.variant,
            "target": list(tr.target) if tr.target is not None else None,
            "solver": tr.metadata,
        }
        run.write(stem + ".json", _dump(side))
        files.append(stem + ".csv")
    return files


def cmd_moments(args) -> int:
    cfg = effective_config(args)
    run = Run(cfg, "moments")
    files = _write_trajectories(run, _solve(cfg, cfg.variant))
    run.finish(files=files)
    sys.stdout.write(_dump({"config_hash": run.hash, "files": files}))
    return EXIT_OK


def _summary(cfg: ModelConfig, threads):
    mc = cfg.montecarlo
    # replicas run to the last checkpoint; the horizon is used only when none are given
    chk = sorted(set(cfg.checkpoints)) or [cfg.horizon]
    snap = simulate(
        cfg.kernel, cfg.law, chk, mc.replicas, seed=mc.seed, window=mc.window,
        max_population=mc.max_population, max_events=mc.max_events, threads=threads,
    )
    if not snap.valid().any():
        raise SimulationTruncated(f"all {snap.replicas} replicas hit a cap")
    return estimate_moments(snap, max(1, cfg.n_max))


def cmd_simulate(args) -> int:
    cfg = effective_config(args)
    run = Run(cfg, "simulate")
    summary = _summary(cfg, resolve_threads(args.threads))
    out = {"config_hash": run.hash, "summary": summary.to_dict()}
    run.write("summary.json", _dump(out))
    run.finish()
    sys.stdout.write(_dump({"config_hash": run.hash, "replicas": summary.replicas, "truncated": summary.truncated}))
    return EXIT_OK


def _mc_check(cfg: ModelConfig, trajs_by_variant: dict, summary) -> list:
    """|m_hat - m| <= 3 SE at the origin for every checkpoint."""
    rows = []
    origin = (0,) * cfg.dimension
    for variant, trajs in trajs_by_variant.items():
        for tr in trajs:
            if tr.order > summary.total_mean.shape[0]:
                continue
            for t in summary.checkpoints:
                if t <= 0:
                    continue
                if variant == "local":
                    if tr.target != origin:
                        continue
                    est, se = summary.local_at(tr.order, float(t), origin)
                else:
                    est, se = summary.total(tr.order, float(t))
                ode = tr.at(float(t), origin)
                rows.append(
                    {
                        "n": tr.order,
                        "variant": variant,
                        "t": float(t),
                        "ode": ode,
                        "mc": est,
                        "se": se,
                        "pass": bool(abs(est - ode) <= 3 * se),
                    }
                )
    return rows


def cmd_validate(args) -> int:
    cfg = effective_config(args)
    run = Run(cfg, "validate")
    report = classify(cfg.kernel, cfg.law)
    trajs = {v: _solve(cfg, v) for v in _variants(cfg, args)}
    files = []
    for tr in trajs.values():
        files += _write_trajectories(run, tr)
    verdicts = []
    for tr in trajs.values():
        verdicts += validate_regime(tr, report, window=cfg.fit_window)
    out = {
        "config_hash": run.hash,
        "classification": report.to_dict(),
        "verdicts": {f"{v.form.source}/n={v.n}/{v.variant}": v.to_dict() for v in verdicts},
    }
    if report.regime == SUPERCRITICAL:
        every = [tr for group in trajs.values() for tr in group]
        out["diagnostics"] = supercritical_diagnostics(cfg.kernel, report, every, site=cfg.target_site())
    passed = all(v.passed for v in verdicts)
    if args.simulate:
        summary = _summary(cfg, resolve_threads(args.threads))
        rows = _mc_check(cfg, trajs, summary)
        out["montecarlo"] = rows
        run.write("summary.json", _dump({"config_hash": run.hash, "summary": summary.to_dict()}))
        passed &= all(r["pass"] for r in rows)
    out["passed"] = passed
    run.write("report.json", _dump(out))
    run.finish(files=files)
    lines = [f"{'PASS' if v.passed else 'FAIL'} {k}" for k, v in zip(out["verdicts"], verdicts)]
    sys.stdout.write("\n".join(lines) + "\n")
    return EXIT_OK if passed else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="model config (JSON)")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--seed", type=int, help="Monte Carlo seed override")
    common.add_argument("--n", type=int, help="highest moment order")
    common.add_argument("--variant", choices=("local", "total"))
    common.add_argument("--site", help='target site y, e.g. "1;0"')
    common.add_argument("--replicas", type=int, help="Monte Carlo replica count")
    common.add_argument("--threads", type=int, help="worker threads (default: $BRWLAB_THREADS)")

    p = argparse.ArgumentParser(prog="brwlab", description="Moments of a branching walk with one branching source.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("classify", parents=[common], help="critical intensity, eigenvalue and regime").set_defaults(func=cmd_classify)
    sub.add_parser("moments", parents=[common], help="solve the moment equations").set_defaults(func=cmd_moments)
    sub.add_parser("simulate", parents=[common], help="Monte Carlo moment estimates").set_defaults(func=cmd_simulate)
    v = sub.add_parser("validate", parents=[common], help="compare fitted exponents with the predicted forms")
    v.add_argument("--simulate", action="store_true", help="also check Monte Carlo against the ODE")
    v.set_defaults(func=cmd_validate)
    return p


def _error(kind: str, exc: BaseException, code: int) -> int:
    sys.stdout.write(_dump({"error": kind, "type": type(exc).__name__, "message": str(exc)}))
    return code


def main(argv=None) -> int:
    # numba falls back to another threading layer on old TBB builds; the notice is noise here
    warnings.filterwarnings("ignore", message="The TBB threading layer")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        return _error("config", exc, EXIT_CONFIG)
    except SimulationTruncated as exc:
        return _error("truncated", exc, EXIT_TRUNCATED)
    except (NumericalError, UnsupportedCombination) as exc:
        return _error("numerical", exc, EXIT_NUMERIC)
    except BRWError as exc:
        return _error("numerical", exc, EXIT_NUMERIC)


if __name__ == "__main__":
    sys.exit(main())
