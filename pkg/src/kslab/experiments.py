"""Experiment runners: single runs, parameter sweeps and their reports.

Every runner takes an :class:`ExperimentConfig` and returns a
:class:`Report`; :func:`run` also writes the report, a manifest and any
run artifacts under ``config.output``. Reports contain no timestamps, so a
rerun with the same config reproduces them byte for byte.
"""

from __future__ import annotations

import dataclasses
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__, particles
from ._accel import USE_NUMBA
from .config import ConfigError, ExperimentConfig, to_dict
from .core import Grid, ScalarField, Trajectory, validate, write_snapshot
from .kernels import bump_normalization
from .metrics import (
    barenblatt_field,
    commutator_ratio,
    field_error,
    fit_rate,
    h1_seminorm,
    lq_norm,
    space_time_norm,
)
from .pde import SystemKind, solve

log = logging.getLogger(__name__)

EXIT_PASS = 0
EXIT_FAIL = 2
EXIT_BLOWUP = 3
EXIT_CONFIG = 4


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str


@dataclass
class Report:
    experiment: str
    columns: tuple[str, ...]
    rows: list[tuple] = field(default_factory=list)
    checks: list[Check] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    status: str = "ok"

    @property
    def passed(self) -> bool:
        return self.status == "ok" and all(c.passed for c in self.checks)

    @property
    def exit_code(self) -> int:
        if self.status != "ok":
            return EXIT_BLOWUP
        return EXIT_PASS if self.passed else EXIT_FAIL

    def table_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(self.columns) + "\n")
        for row in self.rows:
            buf.write(",".join(_fmt(v) for v in row) + "\n")
        return buf.getvalue()

    def lines(self) -> list[str]:
        out = [f"{self.experiment}: {'PASS' if self.passed else 'FAIL'} (status {self.status})"]
        for key, val in self.summary.items():
            out.append(f"  {key} = {_fmt(val)}")
        for c in self.checks:
            out.append(f"  [{'pass' if c.passed else 'FAIL'}] {c.name}: {c.detail}")
        return out

    def text(self) -> str:
        return "\n".join(self.lines()) + "\n"


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _strictly_decreasing(values) -> bool:
    return all(b < a for a, b in zip(values, values[1:]))


def _blown(trajs) -> str:
    for tr in trajs:
        if tr.status != "ok":
            return tr.status
    return "ok"


def _require(errors: list[str]) -> None:
    if errors:
        raise ConfigError("; ".join(errors))


def outer_mass_fraction(u: ScalarField) -> float:
    """Share of the mass outside the inner box ``[-L/2, L/2]^d``."""
    c = np.abs(u.grid.coords()) <= u.grid.half_width / 2
    inner = u.values[np.ix_(*([c] * u.grid.d))].sum() * u.grid.cell_volume
    total = u.mass()
    return float((total - inner) / total) if total else 0.0


def _common_times(a: Trajectory, b: Trajectory) -> list[float]:
    tb = set(b.times)
    return [t for t in a.times if t in tb]


# ----------------------------------------------------------------- runners


def run_single(cfg: ExperimentConfig, out: Path | None = None) -> tuple[object, Report]:
    """One PDE solve (or one particle run) with its artifacts."""
    p, grid = cfg.params, cfg.grid
    mollified = cfg.kind in ("nonlocal", "particles")
    _require(validate(p, grid, mollified=mollified))
    u0 = cfg.initial.build(grid, p.m, p.sigma)
    rep = Report("single_run", ("t", "mass", "linf", "min"))
    if cfg.kind == "particles":
        ens = particles.sample_initial(cfg.particles, u0, p.seed)
        ens = particles.simulate(ens, p, p.t_end, dt_max=cfg.dt_max)
        rho = particles.empirical_density(ens, p.eps_p, grid)
        rep.rows.append((ens.t, rho.mass(), rho.max(), rho.min()))
        rep.summary.update(particles=ens.n, steps=ens.step, t=ens.t, outer_mass_fraction=outer_mass_fraction(rho))
        rep.checks.append(Check("finite positions", bool(np.all(np.isfinite(ens.positions))), f"N={ens.n}"))
        if out is not None:
            ens.write_csv(out / "particles.csv")
            write_snapshot(out / "density.bin", rho, ens.t)
        return ens, rep

    traj = solve(
        u0,
        p,
        cfg.kind,
        cfg.snapshots(),
        dt_override=cfg.dt_override,
        pressure_form=cfg.pressure_form,
    )
    for t, u in zip(traj.times, traj.snapshots):
        rep.rows.append((t, u.mass(), u.max(), u.min()))
    rep.status = traj.status
    m0 = traj.diagnostics[0].mass
    drift = max(abs(r.mass - m0) for r in traj.diagnostics) / m0
    neg = min(r.min + 1e-12 * r.linf for r in traj.diagnostics)
    rep.summary.update(
        steps=len(traj.diagnostics) - 1,
        final_time=traj.times[-1],
        mass_drift=drift,
        outer_mass_fraction=outer_mass_fraction(traj.final),
    )
    if traj.message:
        rep.summary["message"] = traj.message
    rep.checks.append(Check("mass conservation", drift <= 1e-8, f"relative drift {drift:.3e} <= 1e-8"))
    rep.checks.append(Check("positivity", neg >= 0, "min u >= -1e-12 ‖u‖_∞ every step"))
    if out is not None:
        traj.write_diagnostics(out / "diagnostics.csv")
        for k, (t, u) in enumerate(zip(traj.times, traj.snapshots)):
            write_snapshot(out / f"snapshot_{k:04d}.bin", u, t)
    return traj, rep


def run_pme_oracle(cfg: ExperimentConfig, out: Path | None = None) -> Report:
    """Porous-medium solve from a Barenblatt profile, error at each resolution."""
    p = cfg.params
    t0, t1 = cfg.initial.t0, p.t_end
    if not t1 > t0:
        raise ConfigError(f"t_end={t1} must exceed the Barenblatt start time t0={t0}")
    if p.chemotaxis or p.sigma != 0 or p.eta != 0:
        raise ConfigError("porous-medium oracle needs chemotaxis off, sigma=0 and eta=0")
    run_p = dataclasses.replace(p, t_end=t1 - t0)
    rep = Report("pme_oracle", ("n", "rel_l1_error"))
    errors, trajs = [], []
    for n in cfg.sweep:
        grid = Grid(cfg.half_width, int(n), p.d)
        _require(validate(run_p, grid))
        u0 = barenblatt_field(grid, t0, p.m, cfg.initial.mass)
        traj = solve(u0, run_p, "degenerate")
        exact = barenblatt_field(grid, t1, p.m, cfg.initial.mass)
        err = field_error(traj.final, exact, 1) / lq_norm(exact, 1)
        errors.append(err)
        trajs.append(traj)
        rep.rows.append((int(n), err))
        log.info("pme oracle n=%d rel L1 error %.3e", n, err)
    rep.status = _blown(trajs)
    g = cfg.gates
    rep.checks.append(Check("finest error", errors[-1] <= g.max_rel_error, f"{errors[-1]:.3e} <= {g.max_rel_error}"))
    for (na, ea), (nb, eb) in zip(rep.rows, rep.rows[1:]):
        ratio = ea / eb
        rep.checks.append(
            Check(f"refinement {na}->{nb}", ratio >= g.min_refinement_ratio, f"ratio {ratio:.3f} >= {g.min_refinement_ratio}")
        )
    return rep


def run_epsilon_sweep(cfg: ExperimentConfig, out: Path | None = None) -> Report:
    """Non-local solutions against the regularized reference for each ε."""
    p, grid = cfg.params, cfg.grid
    eps_list = sorted(cfg.sweep, reverse=True)
    if len(eps_list) < 3:
        raise ConfigError(f"need ≥ 3 points for a rate fit, got {len(eps_list)}")
    for eps in eps_list:
        _require(validate(dataclasses.replace(p, eps_k=eps, eps_p=eps), grid, mollified=True))
    u0 = cfg.initial.build(grid, p.m, p.sigma)
    times = cfg.snapshots()
    ref = solve(u0, p, "regularized", times, pressure_form=cfg.pressure_form)
    rep = Report("epsilon_sweep", ("eps", "l2_error", "h1_error"))
    trajs = [ref]
    pts = []
    for eps in eps_list:
        traj = solve(u0, dataclasses.replace(p, eps_k=eps, eps_p=eps), "nonlocal", times)
        trajs.append(traj)
        common = _common_times(traj, ref)
        l2 = max(field_error(traj.at(t), ref.at(t), 2) for t in common)
        h1 = max(h1_seminorm(traj.at(t) - ref.at(t)) for t in common)
        rep.rows.append((eps, l2, h1))
        pts.append((eps, l2))
        log.info("epsilon sweep eps=%g sup-time L2 error %.3e", eps, l2)
    rep.status = _blown(trajs)
    fit = fit_rate(pts)
    rep.summary.update(slope=fit.slope, intercept=fit.intercept, residual=fit.residual)
    rep.summary["fit"] = fit.csv_row("l2_vs_eps")
    g = cfg.gates
    rep.checks.append(Check("slope", fit.slope >= g.min_slope, f"{fit.slope:.4f} >= {g.min_slope}"))
    limit = g.max_residual_fraction * abs(fit.intercept)
    rep.checks.append(Check("fit residual", fit.residual <= limit, f"{fit.residual:.4f} <= {limit:.4f}"))
    return rep


def run_sigma_sweep(cfg: ExperimentConfig, out: Path | None = None) -> Report:
    """Successive space-time ``L^{2m}`` differences as σ decreases."""
    p, grid = cfg.params, cfg.grid
    sigmas = sorted(cfg.sweep, reverse=True)
    if len(sigmas) < 2:
        raise ConfigError("sigma sweep needs at least two values")
    _require(validate(p, grid, sigma_limit=True))
    times = cfg.snapshots()
    if not times:
        raise ConfigError("sigma sweep needs snapshot times")
    q = 2 * p.m
    trajs, peaks = [], []
    for s in sigmas:
        ps = dataclasses.replace(p, sigma=s)
        traj = solve(cfg.initial.build(grid, p.m, s), ps, "regularized", times)
        trajs.append(traj)
        peaks.append(max(r.linf for r in traj.diagnostics))
        log.info("sigma sweep sigma=%g max ‖u‖_∞ %.4f", s, peaks[-1])
    diffs = []
    for a, b in zip(trajs, trajs[1:]):
        common = _common_times(a, b)
        diffs.append(space_time_norm(common, [a.at(t) - b.at(t) for t in common], q))
    rep = Report("sigma_sweep", ("sigma", "max_linf", "diff_to_next"))
    for k, s in enumerate(sigmas):
        rep.rows.append((s, peaks[k], diffs[k] if k < len(diffs) else None))
    rep.status = _blown(trajs)
    spread = (max(peaks) - min(peaks)) / min(peaks)
    rep.summary.update(spread=spread)
    rep.checks.append(Check("Cauchy differences", _strictly_decreasing(diffs), "strictly decreasing"))
    g = cfg.gates
    rep.checks.append(Check("uniform bound", spread <= g.max_spread, f"spread {spread:.4f} <= {g.max_spread}"))
    return rep


def run_eta_sweep(cfg: ExperimentConfig, out: Path | None = None) -> Report:
    """L¹ distance of the η-shifted solutions to the η=0 regularized one."""
    p, grid = cfg.params, cfg.grid
    _require(validate(p, grid))
    u0 = cfg.initial.build(grid, p.m, p.sigma)
    ref = solve(u0, dataclasses.replace(p, eta=0.0), "regularized")
    etas = sorted(cfg.sweep, reverse=True)
    rep = Report("eta_sweep", ("eta", "l1_distance"))
    trajs = [ref]
    dists = []
    for eta in etas:
        traj = solve(u0, dataclasses.replace(p, eta=eta), "eta")
        trajs.append(traj)
        dists.append(field_error(traj.final, ref.final, 1))
        rep.rows.append((eta, dists[-1]))
    rep.status = _blown(trajs)
    rep.checks.append(Check("L1 distance", _strictly_decreasing(dists), "strictly decreasing in eta"))
    return rep


def run_particle_meanfield(cfg: ExperimentConfig, out: Path | None = None) -> Report:
    """Seed-averaged L¹ distance between particle KDEs and the non-local PDE."""
    p, grid = cfg.params, cfg.grid
    _require(validate(p, grid, mollified=True))
    u0 = cfg.initial.build(grid, p.m, p.sigma)
    traj = solve(u0, p, "nonlocal")
    target = traj.final
    rep = Report("particle_meanfield", ("N", "mean_l1", "std_l1", "min_l1", "max_l1"))
    means = []
    for n in cfg.sweep:
        errs = []
        for seed in cfg.seeds:
            ens = particles.sample_initial(int(n), u0, seed)
            ens = particles.simulate(ens, p, p.t_end, dt_max=cfg.dt_max)
            kde = particles.empirical_density(ens, p.eps_p, grid)
            errs.append(field_error(kde, target, 1))
        e = np.array(errs)
        means.append(float(e.mean()))
        rep.rows.append((int(n), float(e.mean()), float(e.std()), float(e.min()), float(e.max())))
        log.info("particles N=%d mean L1 %.4e over %d seeds", n, e.mean(), len(errs))
    rep.status = traj.status
    rep.checks.append(Check("mean L1 error", _strictly_decreasing(means), "strictly decreasing in N"))
    return rep


def commutator_pair(grid: Grid, rng: np.random.Generator) -> tuple[ScalarField, ScalarField]:
    """Random smooth ``f`` (compact bump) and ``g`` (plane wave plus a tilt)."""
    L, d = grid.half_width, grid.d
    center = rng.uniform(-0.25 * L, 0.25 * L, d)
    radius = rng.uniform(0.2 * L, 0.4 * L)
    x = np.stack(grid.mesh(), axis=-1)
    s2 = np.sum((x - center) ** 2, axis=-1) / radius**2
    inside = s2 < 1
    f = np.where(inside, np.exp(-1.0 / np.where(inside, 1 - s2, 1.0)), 0.0) * bump_normalization(d)
    k = rng.uniform(-3.0, 3.0, d) / L
    tilt = rng.uniform(-1.0, 1.0, d) / L
    phase = rng.uniform(0, 2 * math.pi)
    g = np.cos(x @ k * math.pi + phase) + x @ tilt
    return ScalarField(grid, f), ScalarField(grid, g)


def run_commutator(cfg: ExperimentConfig, out: Path | None = None) -> Report:
    """Mollifier commutator ratio for random smooth pairs across ε."""
    grid = cfg.grid
    eps_list = sorted(cfg.sweep, reverse=True)
    for eps in eps_list:
        if grid.h > eps / 4 * (1 + 1e-12):
            raise ConfigError(f"grid spacing {grid.h:g} under-resolves eps={eps:g}")
    rng = np.random.Generator(np.random.Philox(key=cfg.params.seed))
    rep = Report("commutator", ("pair", "q", "eps", "ratio"))
    worst = 0.0
    for k in range(cfg.pairs):
        f, g = commutator_pair(grid, rng)
        for q in cfg.q_values:
            ratios = [commutator_ratio(f, g, eps, q) for eps in eps_list]
            for eps, r in zip(eps_list, ratios):
                rep.rows.append((k, q, eps, r))
            worst = max(worst, max(ratios) / ratios[0])
    limit = cfg.gates.commutator_growth
    rep.summary.update(worst_growth=worst)
    rep.checks.append(Check("ratio growth", worst <= limit, f"max ratio / ratio at eps={eps_list[0]:g} = {worst:.4f} <= {limit}"))
    return rep


RUNNERS = {
    "pme_oracle": run_pme_oracle,
    "epsilon_sweep": run_epsilon_sweep,
    "sigma_sweep": run_sigma_sweep,
    "eta_sweep": run_eta_sweep,
    "particle_meanfield": run_particle_meanfield,
    "commutator": run_commutator,
}


def manifest(cfg: ExperimentConfig) -> dict:
    return {
        "kslab_version": __version__,
        "backend": "numba" if USE_NUMBA else "numpy",
        "seed": cfg.params.seed,
        "seeds": list(cfg.seeds),
        "config": to_dict(cfg),
    }


def run(cfg: ExperimentConfig, *, write: bool = True) -> Report:
    """Dispatch on ``cfg.experiment`` and write report, table and manifest."""
    out = Path(cfg.output)
    if write:
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    target = out if write else None
    if cfg.experiment == "single_run":
        _, rep = run_single(cfg, target)
    else:
        rep = RUNNERS[cfg.experiment](cfg, target)
    if write:
        (out / "report.csv").write_text(rep.table_csv())
        (out / "report.txt").write_text(rep.text())
        (out / "manifest.yaml").write_text(yaml.safe_dump(manifest(cfg), sort_keys=False, allow_unicode=True))
    return rep
