"""Experiment description shared by the solver, the simulator and the CLI."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Any, Mapping

from .branching_law import OffspringLaw, beta_star, law_to_spec, offspring_law
from .errors import ConfigError
from .spectral import beta_critical, lambda0
from .walk_kernel import WalkKernel, build_kernel, kernel_to_spec

SCHEMA = "brwlab.config/1"

DEFAULT_TOLERANCES = {
    "rtol": 1e-8,
    "atol": 1e-12,
    "leak_tol": 1e-6,
    "leak_tol_total": 0.1,
    "quad_rtol": 1e-8,
}


@dataclass(frozen=True)
class MonteCarloSettings:
    replicas: int = 10_000
    seed: int = 0
    max_population: int = 1_000_000
    max_events: int = 100_000_000
    window: int = 2  # track mu(t, y) for |y|_inf <= window

    def to_dict(self) -> dict:
        return {
            "replicas": self.replicas,
            "seed": self.seed,
            "max_population": self.max_population,
            "max_events": self.max_events,
            "window": self.window,
        }


@dataclass(frozen=True)
class ModelConfig:
    kernel: WalkKernel
    law: OffspringLaw
    truncation: int = 40
    horizon: float = 10.0
    checkpoints: tuple = ()
    n_max: int = 2
    variant: str = "local"
    site: tuple | None = None
    montecarlo: MonteCarloSettings = field(default_factory=MonteCarloSettings)
    tolerances: Mapping = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    fit_window: tuple | None = None
    output: str = "out"
    name: str = ""

    @property
    def dimension(self) -> int:
        return self.kernel.dimension

    def tol(self, key: str) -> float:
        return float(self.tolerances.get(key, DEFAULT_TOLERANCES[key]))

    def with_(self, **changes) -> "ModelConfig":
        return replace(self, **changes)

    def target_site(self) -> tuple:
        return tuple(self.site) if self.site is not None else (0,) * self.dimension

    def to_dict(self) -> dict:
        tols = {k: repr(float(v)) for k, v in sorted(self.tolerances.items())}
        out = {
            "schema": SCHEMA,
            "name": self.name,
            "dimension": self.dimension,
            "kernel": kernel_to_spec(self.kernel),
            "offspring": law_to_spec(self.law),
            "truncation": self.truncation,
            "horizon": self.horizon,
            "checkpoints": list(self.checkpoints),
            "moments": {"n_max": self.n_max, "variant": self.variant, "site": None if self.site is None else list(self.site)},
            "montecarlo": self.montecarlo.to_dict(),
            "tolerances": tols,
            "output": self.output,
        }
        if self.fit_window is not None:
            out["fit_window"] = list(self.fit_window)
        return out


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def config_hash(config: ModelConfig) -> str:
    """Stable 16-hex-digit key of the model and run settings (the output directory is excluded)."""
    data = config.to_dict()
    data.pop("output", None)
    return hashlib.sha256(canonical_json(data).encode()).hexdigest()[:16]


def serialize(config: ModelConfig) -> str:
    return json.dumps(config.to_dict(), sort_keys=True, indent=2) + "\n"


def _num(v, key):
    try:
        return float(v)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: expected a number, got {v!r}") from exc


def parse_config(data: Mapping | str) -> ModelConfig:
    """Parse a config mapping (or JSON text).

    The offspring block may ask for the death rate relative to the isolated
    eigenvalue: ``{"b": {"2": 1.0}, "death_rate": {"lambda0_offset": 0.2}}``
    sets b_0 = lambda_0 + 0.2 (0 gives the critical model).  Similarly
    ``{"beta_star_factor": 0.5}`` in place of ``b`` scales beta_c.
    """
    if isinstance(data, str):
        try:
            data = json.loads(data)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
    if not isinstance(data, Mapping):
        raise ConfigError("config must be a JSON object")
    schema = data.get("schema", SCHEMA)
    if schema != SCHEMA:
        raise ConfigError(f"unsupported schema {schema!r}")
    try:
        d = int(data["dimension"])
        kernel = build_kernel(data["kernel"], d)
        law = _parse_offspring(data.get("offspring", {}), kernel)
    except KeyError as exc:
        raise ConfigError(f"missing key {exc}") from exc

    mom = data.get("moments", {})
    variant = mom.get("variant", "local")
    if variant not in ("local", "total"):
        raise ConfigError(f"variant must be 'local' or 'total', got {variant!r}")
    site = mom.get("site")
    if site is not None:
        site = tuple(int(v) for v in site)
        if len(site) != d:
            raise ConfigError(f"site must have {d} coordinates")
    mc = data.get("montecarlo", {})
    tols = dict(DEFAULT_TOLERANCES)
    for k, v in data.get("tolerances", {}).items():
        if k not in DEFAULT_TOLERANCES:
            raise ConfigError(f"unknown tolerance {k!r}")
        tols[k] = _num(v, f"tolerances.{k}")
    truncation = int(data.get("truncation", 40))
    if truncation < 1:
        raise ConfigError("truncation must be >= 1")
    horizon = _num(data.get("horizon", 10.0), "horizon")
    if horizon <= 0:
        raise ConfigError("horizon must be positive")
    checkpoints = tuple(sorted(_num(c, "checkpoints") for c in data.get("checkpoints", [])))
    if any(c < 0 or c > horizon for c in checkpoints):
        raise ConfigError("checkpoints must lie in [0, horizon]")
    fw = data.get("fit_window")
    return ModelConfig(
        kernel=kernel,
        law=law,
        truncation=truncation,
        horizon=horizon,
        checkpoints=checkpoints,
        n_max=int(mom.get("n_max", 2)),
        variant=variant,
        site=site,
        montecarlo=MonteCarloSettings(
            replicas=int(mc.get("replicas", 10_000)),
            seed=int(mc.get("seed", 0)),
            max_population=int(float(mc.get("max_population", 1_000_000))),
            max_events=int(float(mc.get("max_events", 100_000_000))),
            window=int(mc.get("window", 2)),
        ),
        tolerances=tols,
        fit_window=None if fw is None else (float(fw[0]), float(fw[1])),
        output=str(data.get("output", "out")),
        name=str(data.get("name", "")),
    )


def _parse_offspring(spec: Mapping, kernel: WalkKernel) -> OffspringLaw:
    b = dict(spec.get("b", {}))
    if "beta_star_factor" in spec:
        bstar = _num(spec["beta_star_factor"], "beta_star_factor") * beta_critical(kernel)
        size = int(spec.get("offspring_size", 2))
        b = {k: v for k, v in b.items() if int(k) in (0,)}
        b[size] = bstar / (size - 1)
    death = spec.get("death_rate")
    if isinstance(death, Mapping):
        tmp = offspring_law({**b, 0: 0.0})
        lam0 = lambda0(kernel, beta_star(tmp))
        if lam0 is None:
            raise ConfigError("death_rate relative to lambda0 needs beta* > beta_c")
        b[0] = lam0 + _num(death.get("lambda0_offset", 0.0), "lambda0_offset")
    elif death is not None:
        b[0] = _num(death, "death_rate")
    b = {int(k): _num(v, f"b[{k}]") for k, v in b.items()}
    return offspring_law(b)


def load_config(path) -> ModelConfig:
    with open(path) as fh:
        return parse_config(fh.read())
