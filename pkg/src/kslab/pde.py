"""Explicit finite-volume solvers for the Keller–Segel ladder.

Four systems share one conservative update:

* ``degenerate``:  ∂_t u = Δu^m - ∇·(u ∇c),            -Δc = u
* ``regularized``: ∂_t u = σΔu + Δu^m - ∇·(u ∇c),      -Δc = u
* ``eta``:         ∂_t u = σΔu + Δ(u+η)^m - ∇·(u ∇c),  -Δc = u
* ``nonlocal``:    ∂_t u = σΔu + ∇·(u ∇p_λ(V^{ε_p} * u)) - ∇·(u ∇c), -Δc = V^{ε_k} * u

Local kinds use the identity ``u ∇p(u) = ∇u^m``; the non-local kind keeps
the drift form. ``∇c`` always comes from convolution with a tabulated kernel
gradient.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np

from .core import DiagnosticRecord, Grid, ScalarField, SimParams, Trajectory, VectorField, validate
from .fluxes import flux_divergence
from .kernels import convolve_arrays, mollifier_table, potential_gradient_tables, solve_poisson
from .pressure import PressureLaw

log = logging.getLogger(__name__)

CFL_SAFETY = 0.4
BLOWUP_FACTOR = 1e6
_TINY = 1e-300


class SystemKind(str, Enum):
    DEGENERATE = "degenerate"
    REGULARIZED = "regularized"
    ETA = "eta"
    NONLOCAL = "nonlocal"

    @property
    def local(self) -> bool:
        return self is not SystemKind.NONLOCAL


class CFLViolation(ValueError):
    pass


class SuspectedBlowUp(RuntimeError):
    """Raised when the density turns non-finite or grows past the blow-up threshold."""

    def __init__(self, message: str, t: float):
        super().__init__(message)
        self.t = t


def effective_params(params: SimParams, kind: SystemKind | str) -> SimParams:
    """Zero the constants a system does not carry."""
    kind = SystemKind(kind)
    if kind is SystemKind.DEGENERATE:
        return dataclasses.replace(params, sigma=0.0, eta=0.0, lam=0.0)
    if kind is SystemKind.REGULARIZED:
        return dataclasses.replace(params, eta=0.0, lam=0.0)
    if kind is SystemKind.ETA:
        return dataclasses.replace(params, lam=0.0)
    return dataclasses.replace(params, eta=0.0)


@dataclass(frozen=True, eq=False)
class Operators:
    """Per-(params, grid, kind) kernel spectra and pressure law."""

    params: SimParams
    grid: Grid
    kind: SystemKind
    spectra: tuple
    law: PressureLaw | None


@lru_cache(maxsize=32)
def build_operators(params: SimParams, grid: Grid, kind: SystemKind) -> Operators:
    kind = SystemKind(kind)
    params = effective_params(params, kind)
    spectra = []
    law = None
    if kind is SystemKind.NONLOCAL:
        errors = validate(params, grid, mollified=True)
        if errors:
            raise ValueError("; ".join(errors))
        law = PressureLaw(params.m, params.lam)
        spectra.append(mollifier_table(grid, params.eps_p))
    if params.chemotaxis:
        eps = params.eps_k if kind is SystemKind.NONLOCAL else None
        spectra.extend(potential_gradient_tables(grid, eps))
    return Operators(params, grid, kind, tuple(spectra), law)


@dataclass(frozen=True, eq=False)
class SolverState:
    """Density at time ``t`` with the convolution caches derived from it.

    ``grad_c`` is ``None`` when chemotaxis is off; ``w = V^{ε_p} * u`` is only
    present for the non-local system.
    """

    t: float
    u: ScalarField
    grad_c: VectorField | None
    w: ScalarField | None
    kind: SystemKind
    params: SimParams
    drift_form: bool = False

    @property
    def c(self) -> ScalarField:
        eps = self.params.eps_k if self.kind is SystemKind.NONLOCAL else None
        return solve_poisson(self.u, eps)[0]

    @property
    def source(self) -> ScalarField:
        """Right-hand side of the Poisson equation."""
        if self.kind is SystemKind.NONLOCAL:
            table = mollifier_table(self.u.grid, self.params.eps_k)
            return ScalarField(self.u.grid, convolve_arrays(self.u.values, self.u.grid, [table])[0])
        return self.u


def make_state(
    u: ScalarField,
    params: SimParams,
    kind: SystemKind | str,
    t: float = 0.0,
    pressure_form: str | None = None,
) -> SolverState:
    """Build a state and its caches.

    ``pressure_form`` is ``"divergence"`` (default for local kinds) or
    ``"drift"`` (forced for the non-local kind); the drift form discretizes a
    local pressure term as ``u_up ∇p(u+η)`` exactly like the non-local flux.
    """
    kind = SystemKind(kind)
    drift = _drift_form(kind, pressure_form)
    ops = build_operators(params, u.grid, kind)
    grad_c = None
    w = None
    if ops.spectra:
        out = convolve_arrays(u.values, u.grid, ops.spectra)
        if kind is SystemKind.NONLOCAL:
            w = ScalarField(u.grid, out.pop(0))
        if out:
            grad_c = VectorField(u.grid, out)
    return SolverState(float(t), u, grad_c, w, kind, ops.params, drift)


def _drift_form(kind: SystemKind, pressure_form: str | None) -> bool:
    if pressure_form not in (None, "divergence", "drift"):
        raise ValueError(f"unknown pressure form {pressure_form!r}")
    if kind is SystemKind.NONLOCAL:
        if pressure_form == "divergence":
            raise ValueError("the non-local system has no divergence form")
        return True
    return pressure_form == "drift"


def make_initial_data(u0: ScalarField, sigma: float) -> ScalarField:
    """Mollify ``u0`` at radius ``√σ`` clamped to ``[2h, L/8]``.

    The discrete kernel has unit mass, so mass is preserved and every L^q
    norm is non-increasing. Round-off negatives are clipped.
    """
    vals = u0.values
    if vals.min() < -1e-12 * max(vals.max(), 0.0):
        raise ValueError("initial density has negative values")
    g = u0.grid
    delta = min(max(math.sqrt(max(sigma, 0.0)), 2 * g.h), g.half_width / 8)
    table = mollifier_table(g, delta)
    out = convolve_arrays(np.maximum(vals, 0.0), g, [table])[0]
    return ScalarField(g, np.maximum(out, 0.0))


def initial_mollification_radius(grid: Grid, sigma: float) -> float:
    return min(max(math.sqrt(max(sigma, 0.0)), 2 * grid.h), grid.half_width / 8)


def _pressure_potential(state: SolverState) -> np.ndarray:
    p = state.params
    if state.kind is SystemKind.NONLOCAL:
        law = build_operators(p, state.u.grid, state.kind).law
        return law.value(np.maximum(state.w.values, 0.0))
    if state.drift_form:
        return PressureLaw(p.m).value(np.maximum(state.u.values, 0.0) + p.eta)
    return (np.maximum(state.u.values, 0.0) + p.eta) ** p.m


def _max_face_slope(pot: np.ndarray, h: float) -> float:
    return max(float(np.abs(np.diff(pot, axis=a)).max()) for a in range(pot.ndim)) / h


def stable_dt(state: SolverState, params: SimParams | None = None, kind: SystemKind | str | None = None) -> float:
    """``0.4 min(h²/(2d(σ + D_max)), h/(2 |v|_∞))``.

    ``D_max`` is ``m (u+η)^{m-1}`` for local kinds and ``u p_λ'(V^{ε_p} * u)``
    for the non-local kind, whose drift speed ``|∇p_λ(w)|`` is added to the
    chemotactic speed.
    """
    p = state.params if params is None else effective_params(params, kind or state.kind)
    grid = state.u.grid
    h, d = grid.h, grid.d
    u = np.maximum(state.u.values, 0.0)
    vel = state.grad_c.max_abs() if state.grad_c is not None else 0.0
    if state.kind is SystemKind.NONLOCAL:
        law = build_operators(p, grid, state.kind).law
        wv = np.maximum(state.w.values, 0.0)
        dmax = float((u * law.prime(wv)).max())
        vel += _max_face_slope(law.value(wv), h)
    else:
        dmax = float((p.m * (u + p.eta) ** (p.m - 1)).max())
        if state.drift_form:
            vel += _max_face_slope(_pressure_potential(state), h)
    diff = h * h / (2 * d * (p.sigma + dmax) + _TINY)
    adv = h / (2 * vel + _TINY)
    return CFL_SAFETY * min(diff, adv)


def step(
    state: SolverState,
    params: SimParams | None = None,
    kind: SystemKind | str | None = None,
    dt: float = 0.0,
    *,
    check_cfl: bool = True,
) -> SolverState:
    """One forward-Euler step of the conservative flux form."""
    if params is not None:
        p = effective_params(params, kind or state.kind)
        if p != state.params:
            form = "drift" if state.drift_form else None
            state = make_state(state.u, p, kind or state.kind, state.t, form)
    if dt <= 0:
        raise ValueError("time step must be positive")
    if check_cfl:
        limit = stable_dt(state)
        if dt > limit * (1 + 1e-12):
            raise CFLViolation(f"dt={dt:g} exceeds stable limit {limit:g}")
    p = state.params
    grid = state.u.grid
    u = state.u.values
    pot = _pressure_potential(state)
    grad = state.grad_c.components if state.grad_c is not None else None
    du = flux_divergence(u, pot, grad, p.sigma, grid.h, state.drift_form)
    new = u + dt * du
    if not np.all(np.isfinite(new)):
        raise SuspectedBlowUp(f"non-finite density after step to t={state.t + dt:g}", state.t)
    form = "drift" if state.drift_form else "divergence"
    return make_state(ScalarField(grid, new), p, state.kind, state.t + dt, form)


def solve(
    u0: ScalarField,
    params: SimParams,
    kind: SystemKind | str,
    snapshot_times=(),
    *,
    dt_override: float | None = None,
    max_steps: int | None = None,
    pressure_form: str | None = None,
) -> Trajectory:
    """Integrate to ``params.t_end``, storing snapshots at the requested times.

    Steps are clipped to land on snapshot times. Non-finite values or growth
    beyond ``1e6 ‖u0‖_∞`` stop the run with status ``"suspected blow-up"``
    and keep the last healthy state as the final snapshot.
    """
    kind = SystemKind(kind)
    p = effective_params(params, kind)
    errors = validate(p, u0.grid, mollified=kind is SystemKind.NONLOCAL)
    if errors:
        raise ValueError("; ".join(errors))
    targets = sorted({float(t) for t in snapshot_times if 0 < t < p.t_end} | {p.t_end})
    traj = Trajectory(p, u0.grid, kind.value)
    state = make_state(u0, p, kind, 0.0, pressure_form)
    traj.append_snapshot(0.0, u0)
    traj.diagnostics.append(DiagnosticRecord.of(u0.values, u0.grid, p.m, 0.0, 0.0))
    ceiling = BLOWUP_FACTOR * max(u0.max(), _TINY)
    steps = 0
    for target in targets:
        while state.t < target:
            if max_steps is not None and steps >= max_steps:
                traj.status = "max-steps"
                traj.message = f"stopped after {steps} steps at t={state.t:g}"
                if traj.times[-1] < state.t:
                    traj.append_snapshot(state.t, state.u)
                return traj
            dt = dt_override if dt_override is not None else stable_dt(state)
            last = target - state.t <= dt * (1 + 1e-12)
            if last:
                dt = target - state.t
            try:
                nxt = step(state, dt=dt, check_cfl=False)
            except SuspectedBlowUp as exc:
                return _abort(traj, state, str(exc))
            if nxt.u.max() > ceiling:
                return _abort(traj, state, f"‖u‖_∞ exceeded {ceiling:g} at t={nxt.t:g}")
            state = nxt
            if last:
                state = dataclasses.replace(state, t=target)
            steps += 1
            traj.diagnostics.append(DiagnosticRecord.of(state.u.values, state.u.grid, p.m, state.t, dt))
        traj.append_snapshot(state.t, state.u)
    log.debug("%s solve finished: %d steps", kind.value, steps)
    return traj


def _abort(traj: Trajectory, state: SolverState, message: str) -> Trajectory:
    log.warning("suspected blow-up: %s", message)
    traj.status = "suspected blow-up"
    traj.message = message
    if traj.times[-1] < state.t:
        traj.append_snapshot(state.t, state.u)
    return traj
