"""Mollifiers, the Newtonian kernel, and zero-padded FFT convolution.

The mollifier is the classical bump ``c_d exp(-1/(1-|x|^2))`` rescaled to
radius ``eps``. The Newtonian potential follows the ``-ΔΦ = δ`` convention:
``-log|x|/(2π)`` in 2D and ``1/(4π|x|)`` in 3D.

For a radial unit-mass kernel the mollified field ``∇Φ * V^eps`` at ``x`` is
``∇Φ(x)`` scaled by the fraction of kernel mass inside ``|x|``, so the
mollified force only needs a one-dimensional enclosed-mass table.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import fft as sfft
from scipy import integrate, special

from ._accel import njit
from .core import Grid, ScalarField, VectorField

SPHERE_AREA = {2: 2.0 * math.pi, 3: 4.0 * math.pi}
# Mean of 1/|x| over the unit cube [0,1]^3.
_CUBE_INV_R = 1.5 * math.log(2.0 + math.sqrt(3.0)) - math.pi / 4.0
# Mean of log|x| over the unit square [0,1]^2.
_SQUARE_LOG_R = (math.log(2.0) - 3.0 + math.pi / 2.0) / 2.0

_TABLE_INTERVALS = 4096


def _bump(s2: np.ndarray) -> np.ndarray:
    """Unnormalized bump profile as a function of squared radius."""
    s2 = np.asarray(s2, dtype=np.float64)
    out = np.zeros_like(s2)
    inside = s2 < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - s2[inside]))
    return out


@lru_cache(maxsize=None)
def bump_normalization(d: int) -> float:
    """Constant ``c_d`` making the bump integrate to one over the unit ball."""
    val, _ = integrate.quad(lambda r: math.exp(-1.0 / (1.0 - r * r)) * r ** (d - 1), 0.0, 1.0, epsabs=0, epsrel=1e-13)
    return 1.0 / (SPHERE_AREA[d] * val)


def _as_points(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def mollifier_value(x, eps: float) -> np.ndarray | float:
    """``V^eps(x)``; ``x`` has the spatial dimension on its last axis."""
    if eps <= 0:
        raise ValueError("mollifier radius must be positive")
    x = _as_points(x)
    d = x.shape[-1]
    s2 = np.sum(x * x, axis=-1) / (eps * eps)
    out = bump_normalization(d) * _bump(s2) / eps**d
    return out if out.ndim else float(out)


def mollifier_gradient(x, eps: float) -> np.ndarray:
    """``∇V^eps(x)``, same trailing shape as ``x``."""
    x = _as_points(x)
    d = x.shape[-1]
    y = x / eps
    s2 = np.sum(y * y, axis=-1)
    v = _bump(s2)
    factor = np.zeros_like(s2)
    inside = s2 < 1.0
    factor[inside] = -2.0 * v[inside] / (1.0 - s2[inside]) ** 2
    return bump_normalization(d) / eps ** (d + 1) * factor[..., None] * y


def mollifier_abs_moment(d: int, power: float = 1.0) -> float:
    """``∫ |z_1|^power V(z) dz`` for the unit-radius bump."""
    # angular factor ∫_{S^{d-1}} |ω_1|^p dω
    if d == 2:
        ang = 4.0 * special.gamma((power + 1) / 2) * math.sqrt(math.pi) / special.gamma(power / 2 + 1) / 2.0
    else:
        ang = 4.0 * math.pi / (power + 1.0)
    rad, _ = integrate.quad(lambda r: math.exp(-1.0 / (1.0 - r * r)) * r ** (d - 1 + power), 0.0, 1.0, epsabs=0, epsrel=1e-13)
    return bump_normalization(d) * ang * rad


@lru_cache(maxsize=None)
def enclosed_mass_table(d: int) -> tuple[np.ndarray, np.ndarray]:
    """Node values and derivatives of the enclosed bump mass on ``[0, 1]``."""
    nodes = np.linspace(0.0, 1.0, _TABLE_INTERVALS + 1)
    gl_x, gl_w = np.polynomial.legendre.leggauss(12)
    c = SPHERE_AREA[d] * bump_normalization(d)
    a, b = nodes[:-1], nodes[1:]
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    s = mid[:, None] + half[:, None] * gl_x[None, :]
    dens = c * _bump(s * s) * s ** (d - 1)
    pieces = (dens * gl_w[None, :]).sum(axis=1) * half
    values = np.concatenate([[0.0], np.cumsum(pieces)])
    deriv = c * _bump(nodes * nodes) * nodes ** (d - 1)
    # pin the total to exactly one so the table joins the far field continuously
    total = values[-1]
    return values / total, deriv / total


@njit
def _hermite_enclosed(s, values, deriv):
    k = values.shape[0] - 1
    if s >= 1.0:
        return 1.0
    if s <= 0.0:
        return 0.0
    pos = s * k
    i = int(pos)
    if i >= k:
        i = k - 1
    t = pos - i
    dx = 1.0 / k
    t2 = t * t
    t3 = t2 * t
    h00 = 2 * t3 - 3 * t2 + 1
    h10 = t3 - 2 * t2 + t
    h01 = -2 * t3 + 3 * t2
    h11 = t3 - t2
    return h00 * values[i] + h10 * dx * deriv[i] + h01 * values[i + 1] + h11 * dx * deriv[i + 1]


def enclosed_mass(s, d: int) -> np.ndarray:
    """Fraction of the bump's mass inside radius ``s`` (in units of ``eps``)."""
    values, deriv = enclosed_mass_table(d)
    s = np.asarray(s, dtype=np.float64)
    k = values.shape[0] - 1
    sc = np.clip(s, 0.0, 1.0)
    pos = sc * k
    i = np.minimum(pos.astype(np.int64), k - 1)
    t = pos - i
    dx = 1.0 / k
    t2 = t * t
    t3 = t2 * t
    out = (
        (2 * t3 - 3 * t2 + 1) * values[i]
        + (t3 - 2 * t2 + t) * dx * deriv[i]
        + (-2 * t3 + 3 * t2) * values[i + 1]
        + (t3 - t2) * dx * deriv[i + 1]
    )
    return np.where(s >= 1.0, 1.0, out)


def newtonian_potential(x, d: int | None = None) -> np.ndarray | float:
    x = _as_points(x)
    d = x.shape[-1] if d is None else d
    r = np.sqrt(np.sum(x * x, axis=-1))
    if np.any(r == 0):
        raise ValueError("Newtonian potential is singular at the origin")
    out = -np.log(r) / (2 * math.pi) if d == 2 else 1.0 / (4 * math.pi * r)
    return out if np.ndim(out) else float(out)


def newtonian_gradient(x) -> np.ndarray:
    """``∇Φ(x) = -x / (|S^{d-1}| |x|^d)``; set to zero at the origin."""
    x = _as_points(x)
    d = x.shape[-1]
    r2 = np.sum(x * x, axis=-1)
    safe = np.where(r2 > 0, r2, 1.0)
    coef = np.where(r2 > 0, -1.0 / (SPHERE_AREA[d] * safe ** (d / 2)), 0.0)
    return coef[..., None] * x


def mollified_potential_gradient(x, eps: float) -> np.ndarray:
    """``∇(Φ * V^eps)(x)``: exact ``∇Φ`` outside ``|x| >= eps``."""
    x = _as_points(x)
    d = x.shape[-1]
    r = np.sqrt(np.sum(x * x, axis=-1))
    return newtonian_gradient(x) * enclosed_mass(r / eps, d)[..., None]


@dataclass(frozen=True, eq=False)
class KernelTable:
    """Kernel samples at every cell offset of ``grid``, with cached spectrum.

    ``samples`` lives on ``grid.kernel_grid()``: index ``n`` along each axis
    is the zero offset.
    """

    grid: Grid
    samples: np.ndarray
    spectrum: np.ndarray

    @classmethod
    def from_samples(cls, grid: Grid, samples: np.ndarray) -> KernelTable:
        samples = np.asarray(samples, dtype=np.float64)
        if samples.shape != (2 * grid.n,) * grid.d:
            raise ValueError(f"kernel samples must have shape {(2 * grid.n,) * grid.d}")
        wrapped = np.fft.ifftshift(samples)
        spectrum = sfft.rfftn(wrapped)
        samples.setflags(write=False)
        spectrum.setflags(write=False)
        return cls(grid, samples, spectrum)

    @classmethod
    def from_function(cls, grid: Grid, func) -> KernelTable:
        """``func`` maps an array of offsets (shape ``(..., d)``) to values."""
        return cls.from_samples(grid, func(_offsets(grid)))


def _offsets(grid: Grid) -> np.ndarray:
    return np.stack(grid.kernel_grid().mesh(), axis=-1)


def _check_resolved(grid: Grid, eps: float) -> None:
    if grid.h > eps / 4 * (1 + 1e-12):
        raise ValueError(f"grid spacing {grid.h:g} does not resolve kernel radius {eps:g} (need h <= eps/4)")


@lru_cache(maxsize=64)
def mollifier_table(grid: Grid, eps: float) -> KernelTable:
    """``V^eps`` on the offset lattice, rescaled to unit discrete mass."""
    samples = mollifier_value(_offsets(grid), eps)
    total = samples.sum() * grid.cell_volume
    if total <= 0:
        raise ValueError(f"mollifier radius {eps:g} has no samples on the grid")
    return KernelTable.from_samples(grid, samples / total)


@lru_cache(maxsize=64)
def mollifier_gradient_tables(grid: Grid, eps: float) -> tuple[KernelTable, ...]:
    off = _offsets(grid)
    total = mollifier_value(off, eps).sum() * grid.cell_volume
    grad = mollifier_gradient(off, eps) / total
    return tuple(KernelTable.from_samples(grid, grad[..., a]) for a in range(grid.d))


def _origin_cell_average(grid: Grid) -> float:
    h = grid.h
    if grid.d == 2:
        return -(math.log(h / 2.0) + _SQUARE_LOG_R) / (2 * math.pi)
    return 2.0 * _CUBE_INV_R / h / (4 * math.pi)


@lru_cache(maxsize=16)
def potential_table(grid: Grid) -> KernelTable:
    """Φ on the offset lattice; the origin cell holds the cell average of Φ."""
    off = _offsets(grid)
    r = np.sqrt(np.sum(off * off, axis=-1))
    origin = (grid.n,) * grid.d
    r[origin] = 1.0
    vals = -np.log(r) / (2 * math.pi) if grid.d == 2 else 1.0 / (4 * math.pi * r)
    vals[origin] = _origin_cell_average(grid)
    return KernelTable.from_samples(grid, vals)


@lru_cache(maxsize=64)
def potential_gradient_tables(grid: Grid, eps: float | None = None) -> tuple[KernelTable, ...]:
    """Components of ``∇Φ`` (``eps=None``) or ``∇Φ^eps`` on the offset lattice."""
    off = _offsets(grid)
    if eps is None:
        g = newtonian_gradient(off)
    else:
        _check_resolved(grid, eps)
        g = mollified_potential_gradient(off, eps)
    return tuple(KernelTable.from_samples(grid, g[..., a]) for a in range(grid.d))


def mollified_potential_gradient_table(eps_k: float, grid: Grid) -> VectorField:
    """``∇Φ^{eps_k}`` on the (node-centered) offset lattice of ``grid``."""
    tables = potential_gradient_tables(grid, eps_k)
    return VectorField(grid.kernel_grid(), [t.samples for t in tables])


def _forward(values: np.ndarray) -> np.ndarray:
    n = values.shape[0]
    return sfft.rfftn(values, s=(2 * n,) * values.ndim)


def _backward(spec: np.ndarray, n: int, d: int, vol: float) -> np.ndarray:
    full = sfft.irfftn(spec, s=(2 * n,) * d)
    return full[(slice(0, n),) * d] * vol


def convolve_arrays(values: np.ndarray, grid: Grid, spectra) -> list[np.ndarray]:
    """Riemann-sum convolutions of one array with several kernel spectra.

    Kernels may be given as :class:`KernelTable` or as raw spectra (products
    of table spectra are allowed, each extra factor carrying ``h^d``).
    """
    fwd = _forward(values)
    out = []
    for s in spectra:
        spec = s.spectrum if isinstance(s, KernelTable) else s
        out.append(_backward(fwd * spec, grid.n, grid.d, grid.cell_volume))
    return out


def convolve_free_space(f: ScalarField, kernel: KernelTable) -> ScalarField:
    """``(K * f)(x_i) ≈ h^d Σ_j K(x_i - x_j) f(x_j)`` without periodic wrap-around."""
    if kernel.grid != f.grid:
        raise ValueError(f"kernel built for n={kernel.grid.n}, field has n={f.grid.n}")
    return ScalarField(f.grid, convolve_arrays(f.values, f.grid, [kernel])[0])


def mollify(f: ScalarField, eps: float) -> ScalarField:
    return convolve_free_space(f, mollifier_table(f.grid, eps))


def solve_poisson(u: ScalarField, eps_k: float | None = None) -> tuple[ScalarField, VectorField]:
    """Return ``c = Φ * s`` and ``∇c = ∇Φ * s`` with source ``s = u`` or ``V^{eps_k} * u``.

    The gradient is a convolution with the tabulated kernel gradient, not a
    finite difference of ``c``. With ``eps_k`` the mollified gradient kernel
    ``∇Φ^{eps_k}`` is applied to ``u`` directly.
    """
    grid = u.grid
    phi = potential_table(grid).spectrum
    if eps_k is not None:
        phi = phi * mollifier_table(grid, eps_k).spectrum * grid.cell_volume
    grads = potential_gradient_tables(grid, eps_k)
    c, *g = convolve_arrays(u.values, grid, [phi, *grads])
    return ScalarField(grid, c), VectorField(grid, g)
