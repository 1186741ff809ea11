"""Norms, errors, rate fits, the Barenblatt oracle and inequality checks."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .core import ScalarField
from .kernels import SPHERE_AREA, convolve_arrays, mollifier_table


def lq_norm(f: ScalarField, q: float) -> float:
    if q < 1:
        raise ValueError(f"L^q norm needs q >= 1, got {q}")
    a = np.abs(f.values)
    if math.isinf(q):
        return float(a.max())
    vol = f.grid.cell_volume
    if q == 1:
        return float(a.sum() * vol)
    if q == 2:
        return float(math.sqrt((a * a).sum() * vol))
    return float(((a**q).sum() * vol) ** (1.0 / q))


def field_error(f: ScalarField, g: ScalarField, q: float) -> float:
    if f.grid != g.grid:
        raise ValueError("cannot compare fields on different grids")
    return lq_norm(f - g, q)


def h1_seminorm(f: ScalarField) -> float:
    """Discrete ``‖∇f‖_2`` from forward differences across interior faces."""
    h = f.grid.h
    total = 0.0
    for axis in range(f.grid.d):
        df = np.diff(f.values, axis=axis) / h
        total += float((df * df).sum())
    return math.sqrt(total * f.grid.cell_volume)


def space_time_norm(times, fields, q: float) -> float:
    """``(Σ_t ‖f(t)‖_q^q Δt)^{1/q}`` with trapezoidal weights in time."""
    times = np.asarray(times, dtype=np.float64)
    if len(times) != len(fields) or len(times) < 2:
        raise ValueError("need matching times and fields, at least two of each")
    vals = np.array([lq_norm(f, q) ** q for f in fields])
    w = np.zeros_like(times)
    dt = np.diff(times)
    w[:-1] += dt / 2
    w[1:] += dt / 2
    return float((vals * w).sum() ** (1.0 / q))


@dataclass(frozen=True)
class RateFit:
    params: tuple[float, ...]
    errors: tuple[float, ...]
    slope: float
    intercept: float
    residual: float

    def csv_row(self, name: str) -> str:
        return f"{name},{self.slope!r},{self.intercept!r},{self.residual!r}"


def fit_rate(points) -> RateFit:
    """Least-squares line through ``(log parameter, log error)``.

    ``residual`` is the root-mean-square deviation in log space.
    """
    pts = [(float(p), float(e)) for p, e in points]
    if len(pts) < 3:
        raise ValueError(f"need ≥ 3 points for a rate fit, got {len(pts)}")
    if any(p <= 0 or e <= 0 for p, e in pts):
        raise ValueError("rate fit needs positive parameters and errors")
    x = np.log([p for p, _ in pts])
    y = np.log([e for _, e in pts])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    return RateFit(
        params=tuple(p for p, _ in pts),
        errors=tuple(e for _, e in pts),
        slope=float(slope),
        intercept=float(intercept),
        residual=float(math.sqrt(np.mean(resid * resid))),
    )


def commutator_norm(f: ScalarField, g: ScalarField, eps: float, q: float) -> float:
    """``‖V^eps * (f g) - (V^eps * f) g‖_q``."""
    if f.grid != g.grid:
        raise ValueError("f and g must share a grid")
    table = mollifier_table(f.grid, eps)
    fg = convolve_arrays(f.values * g.values, f.grid, [table])[0]
    vf = convolve_arrays(f.values, f.grid, [table])[0]
    return lq_norm(ScalarField(f.grid, fg - vf * g.values), q)


def max_gradient(g: ScalarField) -> float:
    """Largest forward-difference slope along any axis."""
    h = g.grid.h
    return max(float(np.abs(np.diff(g.values, axis=a)).max()) / h for a in range(g.grid.d))


def commutator_ratio(f: ScalarField, g: ScalarField, eps: float, q: float) -> float:
    """Commutator norm divided by ``eps ‖∇g‖_∞ ‖f‖_q``."""
    grad = max_gradient(g)
    fq = lq_norm(f, q)
    if grad == 0 or fq == 0:
        raise ValueError("commutator ratio undefined: ‖∇g‖_∞ or ‖f‖_q vanishes")
    return commutator_norm(f, g, eps, q) / (eps * grad * fq)


def barenblatt_exponents(m: float, d: int) -> tuple[float, float, float]:
    """``(α, β, κ)`` of the self-similar porous-medium profile."""
    alpha = d / (d * (m - 1) + 2)
    beta = alpha / d
    kappa = alpha * (m - 1) / (2 * m * d)
    return alpha, beta, kappa


def barenblatt_constant(m: float, d: int, mass: float) -> float:
    """``C_M`` such that the profile carries total mass ``mass``.

    The mass is ``|S^{d-1}| (C/κ)^{d/2} C^k B(d/2, k+1) / 2`` with
    ``k = 1/(m-1)``, solved in closed form for ``C``.
    """
    _, _, kappa = barenblatt_exponents(m, d)
    k = 1.0 / (m - 1)
    shape = SPHERE_AREA[d] * kappa ** (-d / 2) * special.beta(d / 2, k + 1) / 2
    return (mass / shape) ** (1.0 / (k + d / 2))


def barenblatt_radius(t: float, m: float, d: int, mass: float) -> float:
    _, beta, kappa = barenblatt_exponents(m, d)
    return math.sqrt(barenblatt_constant(m, d, mass) / kappa) * t**beta


def barenblatt(x, t: float, m: float, d: int, mass: float = 1.0) -> np.ndarray:
    """Barenblatt solution of ``∂_t u = Δ u^m``; ``x`` has ``d`` on its last axis."""
    if t <= 0:
        raise ValueError("Barenblatt profile needs t > 0")
    if m <= 1:
        raise ValueError("Barenblatt profile needs m > 1")
    x = np.asarray(x, dtype=np.float64)
    alpha, beta, kappa = barenblatt_exponents(m, d)
    cm = barenblatt_constant(m, d, mass)
    r2 = np.sum(x * x, axis=-1)
    bracket = np.maximum(cm - kappa * r2 * t ** (-2 * beta), 0.0)
    return t ** (-alpha) * bracket ** (1.0 / (m - 1))


def barenblatt_field(grid, t: float, m: float, mass: float = 1.0) -> ScalarField:
    pts = np.stack(grid.mesh(), axis=-1)
    return ScalarField(grid, barenblatt(pts, t, m, grid.d, mass))


def l2_energy_balance(u_prev: ScalarField, u_next: ScalarField, dt: float, sigma: float, m: float) -> float:
    """Discrete form of the L² identity for the regularized system.

    ``(‖u'‖² - ‖u‖²)/(2 dt) + σ‖∇u‖² + 4m/(m+1)² ‖∇u^{(m+1)/2}‖² - ½‖u‖_3^3``
    evaluated at the earlier state. Zero for the exact flow; numerical
    dissipation of the upwind scheme makes it negative.
    """
    a = np.maximum(u_prev.values, 0.0)
    vol = u_prev.grid.cell_volume
    dnorm = ((u_next.values**2).sum() - (u_prev.values**2).sum()) * vol / (2 * dt)
    visc = sigma * h1_seminorm(u_prev) ** 2
    half_power = ScalarField(u_prev.grid, a ** ((m + 1) / 2))
    porous = 4 * m / (m + 1) ** 2 * h1_seminorm(half_power) ** 2
    cubic = 0.5 * float((a**3).sum() * vol)
    return float(dnorm + visc + porous - cubic)


def holder_gap(f: ScalarField) -> float:
    """``‖f‖_1 ‖f‖_∞ - ‖f‖_2²`` (nonnegative by Hölder)."""
    return lq_norm(f, 1) * lq_norm(f, math.inf) - lq_norm(f, 2) ** 2
