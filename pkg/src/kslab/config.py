"""YAML experiment configuration with a versioned, closed schema.

Unknown keys anywhere are errors; missing keys take the defaults below.
``emit`` and ``parse`` are inverse to each other.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .core import Grid, ScalarField, SimParams
from .metrics import barenblatt_field
from .pde import make_initial_data

SCHEMA_VERSION = 1
EXPERIMENTS = (
    "pme_oracle",
    "epsilon_sweep",
    "sigma_sweep",
    "eta_sweep",
    "particle_meanfield",
    "commutator",
    "single_run",
)
PROFILES = ("gaussian", "bump", "barenblatt")
RUN_KINDS = ("degenerate", "regularized", "eta", "nonlocal", "particles")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class InitialData:
    """Radial initial profile of total mass ``mass``.

    ``width`` is the standard deviation of a Gaussian or the support radius
    of the bump ``(1 - |x|²/width²)₊²``. Barenblatt data is the exact
    profile at time ``t0``. ``mollify`` applies the σ-dependent smoothing.
    """

    profile: str = "gaussian"
    width: float = 0.35
    mass: float = 1.0
    t0: float = 0.1
    mollify: bool = True

    def raw(self, grid: Grid, m: float) -> ScalarField:
        if self.profile == "barenblatt":
            return barenblatt_field(grid, self.t0, m, self.mass)
        r2 = grid.radius() ** 2
        if self.profile == "gaussian":
            vals = np.exp(-r2 / (2 * self.width**2))
        else:
            vals = np.maximum(1.0 - r2 / self.width**2, 0.0) ** 2
        vals = vals * (self.mass / (vals.sum() * grid.cell_volume))
        return ScalarField(grid, vals)

    def build(self, grid: Grid, m: float, sigma: float) -> ScalarField:
        u = self.raw(grid, m)
        return make_initial_data(u, sigma) if self.mollify else u


@dataclass(frozen=True)
class Gates:
    """Pass thresholds used by the experiment reports."""

    max_rel_error: float = 0.02
    min_refinement_ratio: float = 2.0
    min_slope: float = 0.8
    max_residual_fraction: float = 0.1
    max_spread: float = 0.2
    commutator_growth: float = 1.05


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    params: SimParams = field(default_factory=SimParams)
    half_width: float = 2.0
    n: int = 128
    kind: str = "regularized"
    pressure_form: str = "divergence"
    initial: InitialData = field(default_factory=InitialData)
    sweep: tuple = ()
    snapshot_times: tuple = ()
    snapshot_count: int = 0
    seeds: tuple = (0,)
    output: str = "runs/out"
    particles: int = 1000
    dt_max: float = 0.01
    dt_override: float | None = None
    pairs: int = 10
    q_values: tuple = (1.0, 2.0)
    gates: Gates = field(default_factory=Gates)

    @property
    def grid(self) -> Grid:
        return Grid(self.half_width, self.n, self.params.d)

    def snapshots(self, t_end: float | None = None) -> list[float]:
        """Explicit snapshot times merged with ``snapshot_count`` even ones."""
        t_end = self.params.t_end if t_end is None else t_end
        times = {float(t) for t in self.snapshot_times}
        if self.snapshot_count > 0:
            times |= {t_end * (k + 1) / self.snapshot_count for k in range(self.snapshot_count)}
        return sorted(t for t in times if 0 < t <= t_end)

    def with_overrides(self, *, output: str | None = None, seed: int | None = None) -> ExperimentConfig:
        cfg = self
        if output is not None:
            cfg = dataclasses.replace(cfg, output=str(output))
        if seed is not None:
            params = dataclasses.replace(cfg.params, seed=int(seed))
            cfg = dataclasses.replace(cfg, params=params, seeds=(int(seed),) + tuple(cfg.seeds[1:]))
        return cfg


def _closed(cls, raw, where: str):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{where} must be a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _num(value, where: str, kind=float):
    if isinstance(value, str):
        # YAML 1.1 reads exponent literals like 1e-3 as strings
        try:
            value = float(value)
        except ValueError:
            raise ConfigError(f"{where} must be numeric, got {value!r}") from None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where} must be numeric, got {value!r}")
    if kind is int:
        if isinstance(value, int):
            return value
        if not value.is_integer():
            raise ConfigError(f"{where} must be an integer, got {value!r}")
        return int(value)
    return float(value)


def _coerce_params(p: SimParams) -> SimParams:
    out = {}
    for f in dataclasses.fields(SimParams):
        v = getattr(p, f.name)
        if f.name == "chemotaxis":
            if not isinstance(v, bool):
                raise ConfigError(f"params.chemotaxis must be true or false, got {v!r}")
            out[f.name] = v
        elif f.name in ("d", "seed"):
            out[f.name] = _num(v, f"params.{f.name}", int)
        else:
            out[f.name] = _num(v, f"params.{f.name}")
    return SimParams(**out)


def from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping")
    raw = dict(raw)
    version = raw.pop("schema_version", None)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {version!r}")
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(raw) - names - {"grid"})
    if unknown:
        raise ConfigError(f"unknown key(s): {', '.join(unknown)}")
    grid = raw.pop("grid", None) or {}
    if not isinstance(grid, dict) or set(grid) - {"half_width", "n"}:
        raise ConfigError("grid must be a mapping with keys half_width and n")
    if "experiment" not in raw:
        raise ConfigError("missing key: experiment")
    kw = dict(raw)
    kw["params"] = _coerce_params(_closed(SimParams, raw.get("params"), "params"))
    kw["initial"] = _closed(InitialData, raw.get("initial"), "initial")
    kw["gates"] = _closed(Gates, raw.get("gates"), "gates")
    if "half_width" in grid:
        kw["half_width"] = _num(grid["half_width"], "grid.half_width")
    if "n" in grid:
        kw["n"] = _num(grid["n"], "grid.n", int)
    for key in ("sweep", "snapshot_times", "q_values"):
        if key in kw:
            if not isinstance(kw[key], (list, tuple)):
                raise ConfigError(f"{key} must be a list")
            kw[key] = tuple(_num(v, key) for v in kw[key])
    if "seeds" in kw:
        if not isinstance(kw["seeds"], (list, tuple)):
            raise ConfigError("seeds must be a list")
        kw["seeds"] = tuple(_num(v, "seeds", int) for v in kw["seeds"])
    for key in ("snapshot_count", "particles", "pairs"):
        if key in kw:
            kw[key] = _num(kw[key], key, int)
    for key in ("dt_max",):
        if key in kw:
            kw[key] = _num(kw[key], key)
    if kw.get("dt_override") is not None:
        kw["dt_override"] = _num(kw["dt_override"], "dt_override")
    cfg = ExperimentConfig(**kw)
    check(cfg)
    return cfg


def to_dict(cfg: ExperimentConfig) -> dict:
    out = {"schema_version": SCHEMA_VERSION, "experiment": cfg.experiment}
    out["params"] = dataclasses.asdict(cfg.params)
    out["grid"] = {"half_width": cfg.half_width, "n": cfg.n}
    out["kind"] = cfg.kind
    out["pressure_form"] = cfg.pressure_form
    out["initial"] = dataclasses.asdict(cfg.initial)
    out["sweep"] = list(cfg.sweep)
    out["snapshot_times"] = list(cfg.snapshot_times)
    out["snapshot_count"] = cfg.snapshot_count
    out["seeds"] = list(cfg.seeds)
    out["output"] = cfg.output
    out["particles"] = cfg.particles
    out["dt_max"] = cfg.dt_max
    out["dt_override"] = cfg.dt_override
    out["pairs"] = cfg.pairs
    out["q_values"] = list(cfg.q_values)
    out["gates"] = dataclasses.asdict(cfg.gates)
    return out


def check(cfg: ExperimentConfig) -> None:
    """Schema-level checks; model constraints are left to the solvers."""
    if cfg.experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {cfg.experiment!r}; expected one of {', '.join(EXPERIMENTS)}")
    if cfg.kind not in RUN_KINDS:
        raise ConfigError(f"unknown kind {cfg.kind!r}")
    if cfg.pressure_form not in ("divergence", "drift"):
        raise ConfigError(f"unknown pressure_form {cfg.pressure_form!r}")
    if cfg.initial.profile not in PROFILES:
        raise ConfigError(f"unknown initial profile {cfg.initial.profile!r}")
    if not (cfg.initial.mass > 0 and cfg.initial.width > 0 and cfg.initial.t0 > 0):
        raise ConfigError("initial mass, width and t0 must be positive")
    sweeps = {"pme_oracle", "epsilon_sweep", "sigma_sweep", "eta_sweep", "particle_meanfield", "commutator"}
    if cfg.experiment in sweeps and not cfg.sweep:
        raise ConfigError(f"{cfg.experiment} needs a nonempty sweep list")
    if any(not math.isfinite(v) or v <= 0 for v in cfg.sweep):
        raise ConfigError("sweep values must be positive")
    if not cfg.seeds:
        raise ConfigError("seeds list must be nonempty")
    if any(s < 0 or s >= 2**64 for s in cfg.seeds):
        raise ConfigError("seeds must be 64-bit unsigned integers")
    if cfg.snapshot_count < 0 or cfg.particles < 1 or cfg.pairs < 1:
        raise ConfigError("snapshot_count must be >= 0, particles and pairs >= 1")
    if not cfg.dt_max > 0:
        raise ConfigError("dt_max must be positive")
    if any(q < 1 for q in cfg.q_values):
        raise ConfigError("q_values must be >= 1")


def parse(text: str) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from exc
    return from_dict(raw)


def emit(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False, allow_unicode=True)


def load(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse(text)
