"""Parameter records, grids, fields, trajectories and their file formats."""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SNAPSHOT_MAGIC = b"KSFLD1\x00\x00"
_HEADER = struct.Struct("<8sIIdd")
DIAGNOSTIC_COLUMNS = ("t", "mass", "l1", "l2", "l2m", "linf", "min", "dt")


@dataclass(frozen=True)
class SimParams:
    """Model and discretization constants shared by every solver.

    ``lam`` is the pressure cutoff parameter (``lambda`` is reserved);
    ``lam=0`` means no cutoff. ``chemotaxis=False`` drops the aggregation
    term entirely, which is how the porous-medium oracle runs are set up;
    the sensitivity itself stays fixed at ``chi=1``.
    """

    d: int = 2
    m: float = 2.0
    sigma: float = 0.0
    eps_k: float = 0.1
    eps_p: float = 0.1
    lam: float = 0.0
    eta: float = 0.0
    chi: float = 1.0
    t_end: float = 0.1
    seed: int = 0
    chemotaxis: bool = True


@dataclass(frozen=True)
class Grid:
    """Uniform grid on the box ``[-L, L]^d``.

    Cell-centered grids (the default) hold ``n`` cells per axis with centers
    ``-L + (i + 1/2) h``. Node-centered grids put nodes at ``-L + i h`` and are
    only used to expose convolution kernels, whose lattice contains the origin.
    """

    half_width: float
    n: int
    d: int = 2
    cell_centered: bool = True

    @property
    def h(self) -> float:
        return 2.0 * self.half_width / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def cell_volume(self) -> float:
        return self.h**self.d

    def coords(self) -> np.ndarray:
        offset = 0.5 if self.cell_centered else 0.0
        return -self.half_width + (np.arange(self.n) + offset) * self.h

    def mesh(self) -> list[np.ndarray]:
        x = self.coords()
        return np.meshgrid(*([x] * self.d), indexing="ij")

    def radius(self) -> np.ndarray:
        return np.sqrt(sum(c * c for c in self.mesh()))

    def kernel_grid(self) -> Grid:
        """Node-centered lattice of all offsets between two cells, doubled."""
        return Grid(2.0 * self.half_width, 2 * self.n, self.d, cell_centered=False)


class ScalarField:
    """Grid-sampled scalar function; values are read-only after construction."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: Grid, values):
        arr = np.array(values, dtype=np.float64)
        if arr.shape != grid.shape:
            if arr.size != grid.n**grid.d:
                raise ValueError(f"expected {grid.shape} values, got shape {arr.shape}")
            arr = arr.reshape(grid.shape)
        arr.setflags(write=False)
        self.grid = grid
        self.values = arr

    @classmethod
    def zeros(cls, grid: Grid) -> ScalarField:
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def from_function(cls, grid: Grid, func) -> ScalarField:
        return cls(grid, func(*grid.mesh()))

    def mass(self) -> float:
        return float(self.values.sum() * self.grid.cell_volume)

    def max(self) -> float:
        return float(self.values.max())

    def min(self) -> float:
        return float(self.values.min())

    def reflect(self, axis: int) -> ScalarField:
        return ScalarField(self.grid, np.flip(self.values, axis=axis))

    def shift(self, cells: tuple[int, ...]) -> ScalarField:
        """Translate by whole cells; values leaving the box are dropped."""
        out = np.zeros(self.grid.shape)
        src = []
        dst = []
        for k in cells:
            if k >= 0:
                src.append(slice(0, self.grid.n - k))
                dst.append(slice(k, self.grid.n))
            else:
                src.append(slice(-k, self.grid.n))
                dst.append(slice(0, self.grid.n + k))
        out[tuple(dst)] = self.values[tuple(src)]
        return ScalarField(self.grid, out)

    def _check(self, other: ScalarField) -> None:
        if other.grid != self.grid:
            raise ValueError("fields live on different grids")

    def __add__(self, other: ScalarField) -> ScalarField:
        self._check(other)
        return ScalarField(self.grid, self.values + other.values)

    def __sub__(self, other: ScalarField) -> ScalarField:
        self._check(other)
        return ScalarField(self.grid, self.values - other.values)

    def __mul__(self, alpha: float) -> ScalarField:
        return ScalarField(self.grid, self.values * float(alpha))

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return f"ScalarField(n={self.grid.n}, d={self.grid.d}, mass={self.mass():.6g})"


class VectorField:
    """``d`` component arrays on a shared grid."""

    __slots__ = ("grid", "components")

    def __init__(self, grid: Grid, components):
        comps = []
        for c in components:
            arr = np.array(c, dtype=np.float64).reshape(grid.shape)
            arr.setflags(write=False)
            comps.append(arr)
        if len(comps) != grid.d:
            raise ValueError(f"need {grid.d} components, got {len(comps)}")
        self.grid = grid
        self.components = tuple(comps)

    def max_abs(self) -> float:
        return max(float(np.abs(c).max()) for c in self.components)

    def __getitem__(self, i: int) -> np.ndarray:
        return self.components[i]


@dataclass(frozen=True)
class DiagnosticRecord:
    t: float
    mass: float
    l1: float
    l2: float
    l2m: float
    linf: float
    min: float
    dt: float

    @classmethod
    def of(cls, values: np.ndarray, grid: Grid, m: float, t: float, dt: float) -> DiagnosticRecord:
        vol = grid.cell_volume
        a = np.abs(values)
        return cls(
            t=float(t),
            mass=float(values.sum() * vol),
            l1=float(a.sum() * vol),
            l2=float(math.sqrt((a * a).sum() * vol)),
            l2m=float(((a ** (2.0 * m)).sum() * vol) ** (1.0 / (2.0 * m))),
            linf=float(a.max()),
            min=float(values.min()),
            dt=float(dt),
        )

    def row(self) -> str:
        return ",".join(repr(float(getattr(self, k))) for k in DIAGNOSTIC_COLUMNS)


@dataclass
class Trajectory:
    """Output of a solver run: sampled snapshots plus per-step diagnostics."""

    params: SimParams
    grid: Grid
    kind: str
    times: list[float] = field(default_factory=list)
    snapshots: list[ScalarField] = field(default_factory=list)
    diagnostics: list[DiagnosticRecord] = field(default_factory=list)
    status: str = "ok"
    message: str = ""

    def append_snapshot(self, t: float, u: ScalarField) -> None:
        if self.times and t <= self.times[-1]:
            raise ValueError(f"snapshot time {t} not after {self.times[-1]}")
        if u.grid != self.grid:
            raise ValueError("snapshot grid differs from trajectory grid")
        self.times.append(float(t))
        self.snapshots.append(u)

    @property
    def final(self) -> ScalarField:
        return self.snapshots[-1]

    def at(self, t: float, tol: float = 1e-12) -> ScalarField:
        for s, u in zip(self.times, self.snapshots):
            if abs(s - t) <= tol * max(1.0, abs(t)):
                return u
        raise KeyError(f"no snapshot at t={t}")

    def diagnostics_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(DIAGNOSTIC_COLUMNS) + "\n")
        for rec in self.diagnostics:
            buf.write(rec.row() + "\n")
        return buf.getvalue()

    def write_diagnostics(self, path) -> None:
        Path(path).write_text(self.diagnostics_csv())


def read_diagnostics(path) -> list[DiagnosticRecord]:
    lines = Path(path).read_text().splitlines()
    header = tuple(lines[0].split(","))
    if header != DIAGNOSTIC_COLUMNS:
        raise ValueError(f"unexpected diagnostics header {lines[0]!r}")
    return [DiagnosticRecord(*map(float, ln.split(","))) for ln in lines[1:] if ln]


def write_snapshot(path, u: ScalarField, time: float) -> None:
    g = u.grid
    header = _HEADER.pack(SNAPSHOT_MAGIC, g.d, g.n, float(g.half_width), float(time))
    body = np.ascontiguousarray(u.values, dtype="<f8").tobytes(order="C")
    Path(path).write_bytes(header + body)


def read_snapshot(path) -> tuple[ScalarField, float]:
    raw = Path(path).read_bytes()
    magic, d, n, half_width, time = _HEADER.unpack_from(raw, 0)
    if magic != SNAPSHOT_MAGIC:
        raise ValueError(f"bad snapshot magic {magic!r}")
    grid = Grid(half_width, n, d)
    count = n**d
    expected = _HEADER.size + 8 * count
    if len(raw) != expected:
        raise ValueError(f"snapshot size {len(raw)} != {expected}")
    values = np.frombuffer(raw, dtype="<f8", count=count, offset=_HEADER.size)
    return ScalarField(grid, values.reshape(grid.shape)), time


def validate(
    params: SimParams,
    grid: Grid,
    *,
    mollified: bool = False,
    sigma_limit: bool = False,
) -> list[str]:
    """Return a list naming every violated constraint (empty list means ok).

    ``mollified`` enables the kernel-resolution checks needed by the non-local
    system and the particle density; ``sigma_limit`` enables the exponent
    restriction of the vanishing-viscosity experiment.
    """
    errors = []
    if params.d not in (2, 3):
        errors.append(f"dimension d={params.d} unsupported (need 2 or 3)")
    if grid.d != params.d:
        errors.append(f"grid dimension {grid.d} != params dimension {params.d}")
    if params.m == 1:
        errors.append("pressure exponent m=1 unsupported")
    elif params.m < 1:
        errors.append(f"pressure exponent m={params.m} must exceed 1")
    if sigma_limit and not (params.m == 2 or params.m >= 3):
        errors.append(f"vanishing-viscosity limit needs m=2 or m>=3, got m={params.m}")
    if params.chi != 1.0:
        errors.append(f"chemotactic sensitivity chi={params.chi} must equal 1")
    if params.sigma < 0:
        errors.append(f"viscosity sigma={params.sigma} is negative")
    if params.eta < 0:
        errors.append(f"diffusion shift eta={params.eta} is negative")
    if params.lam < 0:
        errors.append(f"cutoff lambda={params.lam} is negative")
    elif params.lam > 0 and 2 * params.lam >= 1 / params.lam:
        errors.append(f"2λ ≥ 1/λ for λ={params.lam} (need λ < 1/sqrt(2))")
    if not params.t_end > 0:
        errors.append(f"final time t_end={params.t_end} must be positive")
    if not 0 <= params.seed < 2**64:
        errors.append(f"seed {params.seed} is not a 64-bit unsigned integer")
    if grid.n < 2 or grid.n & (grid.n - 1):
        errors.append(f"grid size n={grid.n} is not a power of two")
    if not grid.half_width > 0:
        errors.append(f"half width L={grid.half_width} must be positive")
    if params.eps_k <= 0:
        errors.append(f"eps_k={params.eps_k} must be positive")
    if params.eps_p <= 0:
        errors.append(f"eps_p={params.eps_p} must be positive")
    if mollified:
        if params.lam <= 0:
            errors.append("non-local system requires lambda > 0")
        for name in ("eps_k", "eps_p"):
            eps = getattr(params, name)
            if eps > 0 and grid.h > eps / 4 * (1 + 1e-12):
                errors.append(f"grid spacing h={grid.h:g} under-resolves {name}={eps:g} (need h <= {name}/4)")
    return errors
