"""Moderately interacting particles and the McKean–Vlasov copies.

Particle ``i`` moves with

    dX_i = (1/N) Σ_j ∇Φ^{ε_k}(X_i - X_j) dt - ∇p_λ(ρ_i) dt + sqrt(2σ) dB_i,
    ρ_i  = (1/N) Σ_j V^{ε_p}(X_i - X_j),

where ``∇p_λ(ρ_i) = p_λ'(ρ_i) (1/N) Σ_j ∇V^{ε_p}(X_i - X_j)``. The j = i terms
are kept: they add nothing to the force and ``V^{ε_p}(0)/N`` to ``ρ_i``.

Random numbers come from Philox keyed by the seed with the step index in the
counter, so a run is reproducible independent of how it is chunked.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from ._accel import njit, select
from .core import Grid, ScalarField, SimParams, Trajectory
from .kernels import (
    SPHERE_AREA,
    _hermite_enclosed,
    bump_normalization,
    convolve_arrays,
    enclosed_mass,
    enclosed_mass_table,
    mollifier_gradient_tables,
    mollifier_table,
    potential_gradient_tables,
)
from .pressure import PressureLaw

_STREAM_NOISE = 0
_STREAM_SAMPLING = 1
_CHUNK = 256


def philox(seed: int, step: int, stream: int = _STREAM_NOISE) -> np.random.Generator:
    """Counter-based generator for ``(seed, step, stream)``."""
    bitgen = np.random.Philox(key=int(seed), counter=[0, int(step), int(stream), 0])
    return np.random.Generator(bitgen)


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    positions: np.ndarray
    t: float = 0.0
    seed: int = 0
    step: int = 0

    def __post_init__(self):
        pos = np.array(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[0] < 1:
            raise ValueError("positions must have shape (N, d) with N >= 1")
        if not np.all(np.isfinite(pos)):
            raise ValueError("particle positions must be finite")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def d(self) -> int:
        return self.positions.shape[1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# t={self.t!r} seed={self.seed} step={self.step}\n")
        buf.write(",".join(["id"] + [f"x{k + 1}" for k in range(self.d)]) + "\n")
        for i, row in enumerate(self.positions):
            buf.write(",".join([str(i)] + [repr(float(v)) for v in row]) + "\n")
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())


def read_ensemble_csv(path) -> ParticleEnsemble:
    lines = Path(path).read_text().splitlines()
    meta = dict(item.split("=", 1) for item in lines[0].lstrip("# ").split())
    rows = [ln.split(",") for ln in lines[2:] if ln]
    rows.sort(key=lambda r: int(r[0]))
    pos = np.array([[float(v) for v in r[1:]] for r in rows])
    return ParticleEnsemble(pos, float(meta["t"]), int(meta["seed"]), int(meta["step"]))


def sample_initial(n: int, density: ScalarField, seed: int) -> ParticleEnsemble:
    """Draw ``n`` i.i.d. points from a grid density by rejection sampling.

    The density is piecewise constant on cells; proposals are uniform on the
    bounding box of its support.
    """
    vals = np.maximum(density.values, 0.0)
    if not vals.sum() > 0:
        raise ValueError("cannot sample from a density with zero mass")
    g = density.grid
    h = g.h
    support = np.nonzero(vals > 0)
    lo = np.array([-g.half_width + s.min() * h for s in support])
    hi = np.array([-g.half_width + (s.max() + 1) * h for s in support])
    vmax = vals.max()
    rng = philox(seed, 0, _STREAM_SAMPLING)
    out = []
    have = 0
    while have < n:
        batch = max(2 * (n - have), 1024)
        x = lo + (hi - lo) * rng.random((batch, g.d))
        idx = np.clip(((x + g.half_width) / h).astype(np.int64), 0, g.n - 1)
        accept = rng.random(batch) * vmax < vals[tuple(idx.T)]
        out.append(x[accept])
        have += int(accept.sum())
    return ParticleEnsemble(np.concatenate(out)[:n], 0.0, seed, 0)


# ---------------------------------------------------------------- pair sums


@njit
def _aggregation_2d(xs, ys, eps_k, table_v, table_d):
    # Symmetric pair loop; the far field -x/(2π|x|²) is the common case.
    n = xs.shape[0]
    ox = np.zeros(n)
    oy = np.zeros(n)
    ek2 = eps_k * eps_k
    inv_area = 1.0 / (2.0 * math.pi)
    for i in range(n):
        xi = xs[i]
        yi = ys[i]
        ax = 0.0
        ay = 0.0
        for j in range(i + 1, n):
            dx = xi - xs[j]
            dy = yi - ys[j]
            r2 = dx * dx + dy * dy
            if r2 < ek2:
                if r2 == 0.0:
                    continue
                coef = -inv_area / r2 * _hermite_enclosed(math.sqrt(r2) / eps_k, table_v, table_d)
            else:
                coef = -inv_area / r2
            fx = coef * dx
            fy = coef * dy
            ax += fx
            ay += fy
            ox[j] -= fx
            oy[j] -= fy
        ox[i] += ax
        oy[i] += ay
    return ox, oy


@njit
def _aggregation_3d(xs, ys, zs, eps_k, table_v, table_d):
    n = xs.shape[0]
    ox = np.zeros(n)
    oy = np.zeros(n)
    oz = np.zeros(n)
    ek2 = eps_k * eps_k
    inv_area = 1.0 / (4.0 * math.pi)
    for i in range(n):
        xi = xs[i]
        yi = ys[i]
        zi = zs[i]
        ax = 0.0
        ay = 0.0
        az = 0.0
        for j in range(i + 1, n):
            dx = xi - xs[j]
            dy = yi - ys[j]
            dz = zi - zs[j]
            r2 = dx * dx + dy * dy + dz * dz
            if r2 < ek2:
                if r2 == 0.0:
                    continue
                r = math.sqrt(r2)
                coef = -inv_area / (r2 * r) * _hermite_enclosed(r / eps_k, table_v, table_d)
            else:
                coef = -inv_area / (r2 * math.sqrt(r2))
            fx = coef * dx
            fy = coef * dy
            fz = coef * dz
            ax += fx
            ay += fy
            az += fz
            ox[j] -= fx
            oy[j] -= fy
            oz[j] -= fz
        ox[i] += ax
        oy[i] += ay
        oz[i] += az
    return ox, oy, oz


@njit
def _mollifier_2d(xs, ys, eps, order, starts, cx, cy, nx, ny):
    n = xs.shape[0]
    rho = np.zeros(n)
    gx = np.zeros(n)
    gy = np.zeros(n)
    inv = 1.0 / eps
    for i in range(n):
        xi = xs[i]
        yi = ys[i]
        r = 0.0
        ax = 0.0
        ay = 0.0
        for a in range(max(cx[i] - 1, 0), min(cx[i] + 2, nx)):
            for b in range(max(cy[i] - 1, 0), min(cy[i] + 2, ny)):
                cell = a * ny + b
                for p in range(starts[cell], starts[cell + 1]):
                    j = order[p]
                    dx = (xi - xs[j]) * inv
                    dy = (yi - ys[j]) * inv
                    s2 = dx * dx + dy * dy
                    if s2 < 1.0:
                        q = 1.0 - s2
                        v = math.exp(-1.0 / q)
                        g = -2.0 * v / (q * q)
                        r += v
                        ax += g * dx
                        ay += g * dy
        rho[i] = r
        gx[i] = ax
        gy[i] = ay
    return rho, gx, gy


@njit
def _mollifier_3d(xs, ys, zs, eps, order, starts, cx, cy, cz, nx, ny, nz):
    n = xs.shape[0]
    rho = np.zeros(n)
    gx = np.zeros(n)
    gy = np.zeros(n)
    gz = np.zeros(n)
    inv = 1.0 / eps
    for i in range(n):
        xi = xs[i]
        yi = ys[i]
        zi = zs[i]
        r = 0.0
        ax = 0.0
        ay = 0.0
        az = 0.0
        for a in range(max(cx[i] - 1, 0), min(cx[i] + 2, nx)):
            for b in range(max(cy[i] - 1, 0), min(cy[i] + 2, ny)):
                for c in range(max(cz[i] - 1, 0), min(cz[i] + 2, nz)):
                    cell = (a * ny + b) * nz + c
                    for p in range(starts[cell], starts[cell + 1]):
                        j = order[p]
                        dx = (xi - xs[j]) * inv
                        dy = (yi - ys[j]) * inv
                        dz = (zi - zs[j]) * inv
                        s2 = dx * dx + dy * dy + dz * dz
                        if s2 < 1.0:
                            q = 1.0 - s2
                            v = math.exp(-1.0 / q)
                            g = -2.0 * v / (q * q)
                            r += v
                            ax += g * dx
                            ay += g * dy
                            az += g * dz
        rho[i] = r
        gx[i] = ax
        gy[i] = ay
        gz[i] = az
    return rho, gx, gy, gz


def _cell_list(x: np.ndarray, side: float):
    """Particles sorted by cell, with the CSR offsets of each cell."""
    lo = x.min(axis=0)
    cell_of = np.floor((x - lo) / side).astype(np.int64)
    dims = cell_of.max(axis=0) + 1
    flat = np.ravel_multi_index(tuple(cell_of.T), tuple(dims))
    order = np.argsort(flat, kind="stable")
    counts = np.bincount(flat, minlength=int(np.prod(dims)))
    starts = np.concatenate([[0], np.cumsum(counts)])
    return order, starts, cell_of, dims


def _pair_sums_numba(x, params: SimParams, aggregation: bool, diffusion: bool):
    n, d = x.shape
    cols = [np.ascontiguousarray(x[:, a]) for a in range(d)]
    agg = np.zeros((n, d))
    rho = np.zeros(n)
    grad = np.zeros((n, d))
    if aggregation:
        tv, td = enclosed_mass_table(d)
        kernel = _aggregation_2d if d == 2 else _aggregation_3d
        agg = np.stack(kernel(*cols, params.eps_k, tv, td), axis=1) / n
    if diffusion:
        order, starts, cell_of, dims = _cell_list(x, max(params.eps_k, params.eps_p))
        cells = [np.ascontiguousarray(cell_of[:, a]) for a in range(d)]
        kernel = _mollifier_2d if d == 2 else _mollifier_3d
        out = kernel(*cols, params.eps_p, order, starts, *cells, *(int(k) for k in dims))
        c = bump_normalization(d)
        rho = out[0] * (c / (params.eps_p**d * n))
        grad = np.stack(out[1:], axis=1) * (c / (params.eps_p ** (d + 1) * n))
    return agg, rho, grad


def _pair_sums_numpy(x, params: SimParams, aggregation: bool, diffusion: bool):
    n, d = x.shape
    agg = np.zeros((n, d))
    rho = np.zeros(n)
    grad = np.zeros((n, d))
    c = bump_normalization(d)
    eps = params.eps_p
    for start in range(0, n, _CHUNK):
        xi = x[start : start + _CHUNK]
        diff = xi[:, None, :] - x[None, :, :]
        r2 = np.einsum("ijk,ijk->ij", diff, diff)
        if aggregation:
            r = np.sqrt(r2)
            safe = np.where(r2 > 0, r, 1.0)
            frac = enclosed_mass(safe / params.eps_k, d)
            coef = np.where(r2 > 0, -frac / (SPHERE_AREA[d] * safe**d), 0.0)
            agg[start : start + _CHUNK] = np.einsum("ij,ijk->ik", coef, diff) / n
        if diffusion:
            s2 = r2 / (eps * eps)
            inside = s2 < 1.0
            q = np.where(inside, 1.0 - s2, 1.0)
            v = np.where(inside, np.exp(-1.0 / q), 0.0)
            rho[start : start + _CHUNK] = v.sum(axis=1) * (c / (eps**d * n))
            g = -2.0 * v / (q * q)
            grad[start : start + _CHUNK] = np.einsum("ij,ijk->ik", g, diff) * (c / (eps ** (d + 2) * n))
    return agg, rho, grad


pair_sums = select(_pair_sums_numba, _pair_sums_numpy)


def pair_drift(
    ensemble: ParticleEnsemble,
    params: SimParams,
    *,
    aggregation: bool | None = None,
    diffusion: bool = True,
    law: PressureLaw | None = None,
) -> np.ndarray:
    """Drift of every particle: mollified aggregation minus ``∇p_λ(ρ_i)``."""
    if aggregation is None:
        aggregation = params.chemotaxis
    x = ensemble.positions
    agg, rho, grad = pair_sums(x, params, aggregation, diffusion)
    if not diffusion:
        return agg
    law = law or PressureLaw(params.m, params.lam)
    return agg - law.prime(rho)[:, None] * grad


def local_densities(ensemble: ParticleEnsemble, params: SimParams) -> np.ndarray:
    """``ρ_i = (1/N) Σ_j V^{ε_p}(X_i - X_j)``."""
    return pair_sums(ensemble.positions, params, False, True)[1]


def em_dt(drift: np.ndarray, params: SimParams, dt_max: float) -> float:
    """Largest step keeping every particle within a tenth of the kernel radius."""
    speed = float(np.abs(drift).max()) if drift.size else 0.0
    limit = min(params.eps_k, params.eps_p) / (10.0 * speed) if speed > 0 else math.inf
    return min(dt_max, limit)


def step_em(
    ensemble: ParticleEnsemble,
    params: SimParams,
    dt: float,
    drift: np.ndarray | None = None,
) -> ParticleEnsemble:
    """``X ← X + b dt + sqrt(2σ dt) ξ`` with ξ drawn for ``(seed, step)``."""
    if dt <= 0:
        raise ValueError("time step must be positive")
    if drift is None:
        drift = pair_drift(ensemble, params)
    x = ensemble.positions + drift * dt
    if params.sigma > 0:
        noise = philox(ensemble.seed, ensemble.step).standard_normal(x.shape)
        x = x + math.sqrt(2.0 * params.sigma * dt) * noise
    return ParticleEnsemble(x, ensemble.t + dt, ensemble.seed, ensemble.step + 1)


def simulate(
    ensemble: ParticleEnsemble,
    params: SimParams,
    t_end: float,
    *,
    dt_max: float = 0.01,
    aggregation: bool | None = None,
    diffusion: bool = True,
) -> ParticleEnsemble:
    """Advance to ``t_end`` with the adaptive step of :func:`em_dt`."""
    law = PressureLaw(params.m, params.lam) if diffusion else None
    while ensemble.t < t_end * (1 - 1e-14):
        drift = pair_drift(ensemble, params, aggregation=aggregation, diffusion=diffusion, law=law)
        dt = min(em_dt(drift, params, dt_max), t_end - ensemble.t)
        ensemble = step_em(ensemble, params, dt, drift)
    return ensemble


# ---------------------------------------------------------- density on grid


@njit
def _deposit_2d(x, eps, half_width, h, n):
    out = np.zeros((n, n))
    r = eps / h
    for p in range(x.shape[0]):
        fi = (x[p, 0] + half_width) / h - 0.5
        fj = (x[p, 1] + half_width) / h - 0.5
        i0 = int(math.ceil(fi - r))
        i1 = int(math.floor(fi + r))
        j0 = int(math.ceil(fj - r))
        j1 = int(math.floor(fj + r))
        # normalize over the full stencil so mass leaving the box stays lost
        total = 0.0
        for i in range(i0, i1 + 1):
            dx = (-half_width + (i + 0.5) * h - x[p, 0]) / eps
            for j in range(j0, j1 + 1):
                dy = (-half_width + (j + 0.5) * h - x[p, 1]) / eps
                s2 = dx * dx + dy * dy
                if s2 < 1.0:
                    total += math.exp(-1.0 / (1.0 - s2))
        if total == 0.0:
            continue
        for i in range(max(i0, 0), min(i1, n - 1) + 1):
            dx = (-half_width + (i + 0.5) * h - x[p, 0]) / eps
            for j in range(max(j0, 0), min(j1, n - 1) + 1):
                dy = (-half_width + (j + 0.5) * h - x[p, 1]) / eps
                s2 = dx * dx + dy * dy
                if s2 < 1.0:
                    out[i, j] += math.exp(-1.0 / (1.0 - s2)) / total
    return out


@njit
def _deposit_3d(x, eps, half_width, h, n):
    out = np.zeros((n, n, n))
    r = eps / h
    lo = np.empty(3, dtype=np.int64)
    hi = np.empty(3, dtype=np.int64)
    for p in range(x.shape[0]):
        for a in range(3):
            f = (x[p, a] + half_width) / h - 0.5
            lo[a] = int(math.ceil(f - r))
            hi[a] = int(math.floor(f + r))
        total = 0.0
        for i in range(lo[0], hi[0] + 1):
            dx = (-half_width + (i + 0.5) * h - x[p, 0]) / eps
            for j in range(lo[1], hi[1] + 1):
                dy = (-half_width + (j + 0.5) * h - x[p, 1]) / eps
                for k in range(lo[2], hi[2] + 1):
                    dz = (-half_width + (k + 0.5) * h - x[p, 2]) / eps
                    s2 = dx * dx + dy * dy + dz * dz
                    if s2 < 1.0:
                        total += math.exp(-1.0 / (1.0 - s2))
        if total == 0.0:
            continue
        for i in range(max(lo[0], 0), min(hi[0], n - 1) + 1):
            dx = (-half_width + (i + 0.5) * h - x[p, 0]) / eps
            for j in range(max(lo[1], 0), min(hi[1], n - 1) + 1):
                dy = (-half_width + (j + 0.5) * h - x[p, 1]) / eps
                for k in range(max(lo[2], 0), min(hi[2], n - 1) + 1):
                    dz = (-half_width + (k + 0.5) * h - x[p, 2]) / eps
                    s2 = dx * dx + dy * dy + dz * dz
                    if s2 < 1.0:
                        out[i, j, k] += math.exp(-1.0 / (1.0 - s2)) / total
    return out


def _deposit_numba(x, eps, grid: Grid):
    kernel = _deposit_2d if grid.d == 2 else _deposit_3d
    return kernel(np.ascontiguousarray(x), float(eps), float(grid.half_width), float(grid.h), grid.n)


def _deposit_numpy(x, eps, grid: Grid):
    h, n, d = grid.h, grid.n, grid.d
    reach = int(math.ceil(eps / h)) + 1
    stencil = np.array(np.meshgrid(*([np.arange(-reach, reach + 1)] * d), indexing="ij")).reshape(d, -1).T
    out = np.zeros(grid.shape)
    for start in range(0, x.shape[0], _CHUNK):
        xc = x[start : start + _CHUNK]
        base = np.rint((xc + grid.half_width) / h - 0.5).astype(np.int64)
        idx = base[:, None, :] + stencil[None, :, :]
        centers = -grid.half_width + (idx + 0.5) * h
        s2 = (((centers - xc[:, None, :]) / eps) ** 2).sum(axis=-1)
        inside = s2 < 1.0
        vals = np.zeros_like(s2)
        vals[inside] = np.exp(-1.0 / (1.0 - s2[inside]))
        total = vals.sum(axis=1, keepdims=True)
        vals = np.divide(vals, total, out=np.zeros_like(vals), where=total > 0)
        valid = inside & np.all((idx >= 0) & (idx < n), axis=-1)
        np.add.at(out, tuple(idx[valid].T), vals[valid])
    return out


deposit = select(_deposit_numba, _deposit_numpy)


def empirical_density(ensemble: ParticleEnsemble, eps_p: float, grid: Grid) -> ScalarField:
    """``(1/N) Σ_i V^{ε_p}(x - X_i)`` at the cell centers.

    Each particle's stencil is scaled to unit discrete mass, matching the
    grid mollifier tables, so the field has mass 1 up to what leaves the box.
    """
    if grid.d != ensemble.d:
        raise ValueError("grid and ensemble dimensions differ")
    raw = deposit(ensemble.positions, eps_p, grid)
    return ScalarField(grid, raw / (ensemble.n * grid.cell_volume))


# ------------------------------------------------------- McKean–Vlasov copies


@dataclass(frozen=True, eq=False)
class FrozenFields:
    """Drift ``∇Φ^{ε_k} * u - ∇p_λ(V^{ε_p} * u)`` tabulated on a grid at given times."""

    grid: Grid
    times: np.ndarray
    drift: np.ndarray  # (n_times, d, *grid.shape)
    agg: np.ndarray = field(repr=False)
    diff: np.ndarray = field(repr=False)

    @classmethod
    def from_trajectory(cls, traj: Trajectory, params: SimParams | None = None) -> FrozenFields:
        p = params or traj.params
        g = traj.grid
        law = PressureLaw(p.m, p.lam)
        specs = [mollifier_table(g, p.eps_p), *mollifier_gradient_tables(g, p.eps_p)]
        if p.chemotaxis:
            specs += list(potential_gradient_tables(g, p.eps_k))
        aggs, diffs = [], []
        for u in traj.snapshots:
            out = convolve_arrays(u.values, g, specs)
            w, grads = out[0], out[1 : 1 + g.d]
            agg = np.array(out[1 + g.d :]) if p.chemotaxis else np.zeros((g.d,) + g.shape)
            aggs.append(agg)
            diffs.append(law.prime(np.maximum(w, 0.0))[None] * np.array(grads))
        agg = np.array(aggs)
        diff = np.array(diffs)
        return cls(g, np.array(traj.times), agg - diff, agg, diff)

    @classmethod
    def constant(cls, grid: Grid, velocity, t_end: float) -> FrozenFields:
        v = np.asarray(velocity, dtype=np.float64)
        field_ = np.broadcast_to(v.reshape((grid.d,) + (1,) * grid.d), (grid.d,) + grid.shape)
        drift = np.array([field_, field_])
        zero = np.zeros_like(drift)
        return cls(grid, np.array([0.0, float(t_end)]), drift, drift, zero)

    def drift_at(self, points: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Multilinear interpolation in space and linear in time.

        Returns ``(drift, outside)`` where ``outside`` flags points clamped
        onto the grid.
        """
        if t < self.times[0] - 1e-12 or t > self.times[-1] + 1e-12:
            raise ValueError(f"t={t} outside the frozen-field horizon")
        pts = np.atleast_2d(points)
        g = self.grid
        idx = (pts + g.half_width) / g.h - 0.5
        outside = np.any((idx < 0) | (idx > g.n - 1), axis=1)
        idx = np.clip(idx, 0, g.n - 1)
        k = int(np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 2))
        t0, t1 = self.times[k], self.times[k + 1]
        theta = 0.0 if t1 == t0 else min(max((t - t0) / (t1 - t0), 0.0), 1.0)
        out = np.empty_like(pts)
        for a in range(g.d):
            lo = ndimage.map_coordinates(self.drift[k, a], idx.T, order=1, mode="nearest")
            hi = ndimage.map_coordinates(self.drift[k + 1, a], idx.T, order=1, mode="nearest")
            out[:, a] = (1 - theta) * lo + theta * hi
        return out, outside


def step_mckean_vlasov(
    points: np.ndarray,
    fields: FrozenFields,
    t: float,
    dt: float,
    sigma: float,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Euler–Maruyama step of independent copies driven by frozen fields."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    drift, outside = fields.drift_at(pts, t)
    new = pts + drift * dt
    if sigma > 0:
        if rng is None:
            raise ValueError("a generator is required when sigma > 0")
        new = new + math.sqrt(2.0 * sigma * dt) * rng.standard_normal(pts.shape)
    return new, outside


def simulate_mckean_vlasov(
    ensemble: ParticleEnsemble,
    fields: FrozenFields,
    sigma: float,
    t_end: float,
    dt: float,
) -> tuple[ParticleEnsemble, int]:
    """Advance independent copies; returns the ensemble and the clamp count."""
    x = ensemble.positions
    t = ensemble.t
    step = ensemble.step
    clamped = 0
    while t < t_end * (1 - 1e-14):
        h = min(dt, t_end - t)
        x, out = step_mckean_vlasov(x, fields, t, h, sigma, philox(ensemble.seed, step))
        clamped += int(out.sum())
        t += h
        step += 1
    return ParticleEnsemble(x, t, ensemble.seed, step), clamped
