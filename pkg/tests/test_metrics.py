import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import integrate

from kslab.core import Grid, ScalarField, SimParams
from kslab.kernels import mollifier_abs_moment, mollifier_table, convolve_arrays
from kslab.metrics import (
    barenblatt,
    barenblatt_constant,
    barenblatt_field,
    barenblatt_radius,
    commutator_norm,
    commutator_ratio,
    field_error,
    fit_rate,
    h1_seminorm,
    holder_gap,
    l2_energy_balance,
    lq_norm,
    space_time_norm,
)
from kslab.pde import make_initial_data, make_state, stable_dt, step

from helpers import gaussian

GRID8 = Grid(1.0, 8)
finite = st.floats(-10, 10, allow_nan=False)
field8 = arrays(np.float64, (8, 8), elements=finite).map(lambda a: ScalarField(GRID8, a))
nonneg8 = arrays(np.float64, (8, 8), elements=st.floats(0, 10)).map(lambda a: ScalarField(GRID8, a))
qs = st.sampled_from([1.0, 1.5, 2.0, 4.0, math.inf])


def test_l1_of_indicator_is_area():
    g = Grid(1.0, 16)
    assert lq_norm(ScalarField(g, np.ones(g.shape)), 1) == 4.0
    assert lq_norm(ScalarField(g, np.ones(g.shape)), math.inf) == 1.0


def test_q_below_one_rejected():
    with pytest.raises(ValueError):
        lq_norm(ScalarField.zeros(GRID8), 0.5)


def test_field_error_hand_computed():
    g = Grid(1.0, 4)  # h = 0.5, cell area 0.25
    f = ScalarField(g, np.arange(16.0).reshape(4, 4))
    h = ScalarField(g, np.full((4, 4), 7.5))
    # |k - 7.5| for k = 0..15 sums to 64
    assert field_error(f, h, 1) == 16.0
    # Σ (k - 7.5)^2 = 340
    assert field_error(f, h, 2) == pytest.approx(math.sqrt(85.0))
    assert field_error(f, f, 2) == 0.0
    with pytest.raises(ValueError):
        field_error(f, ScalarField.zeros(Grid(1.0, 8)), 1)


@given(field8, st.floats(0.01, 100), qs)
def test_homogeneity(f, alpha, q):
    assert lq_norm(f * alpha, q) == pytest.approx(alpha * lq_norm(f, q), rel=1e-12, abs=1e-300)


@given(field8, field8, field8, qs)
def test_triangle_inequality(f, g, h, q):
    assert field_error(f, h, q) <= field_error(f, g, q) + field_error(g, h, q) + 1e-9


@given(nonneg8)
def test_holder(f):
    assert holder_gap(f) >= -1e-9 * max(1.0, lq_norm(f, 2) ** 2)


def test_h1_seminorm_of_linear_field():
    g = Grid(1.0, 8)
    x, y = g.mesh()
    f = ScalarField(g, 3 * x)
    # gradient 3 on the 7 x 8 interior faces of width h
    assert h1_seminorm(f) == pytest.approx(math.sqrt(9 * 56 * g.cell_volume))


def test_space_time_norm_of_constant_history():
    g = Grid(1.0, 8)
    f = ScalarField(g, np.ones(g.shape))
    times = [0.0, 0.1, 0.3, 0.5]
    assert space_time_norm(times, [f] * 4, 2) == pytest.approx(math.sqrt(0.5 * 4.0))
    with pytest.raises(ValueError):
        space_time_norm([0.0], [f], 2)


def test_fit_rate_exact_lines():
    eps = [0.4, 0.2, 0.1, 0.05]
    first = fit_rate([(e, 3 * e) for e in eps])
    assert first.slope == pytest.approx(1.0, abs=1e-12)
    assert first.intercept == pytest.approx(math.log(3), abs=1e-12)
    assert first.residual < 1e-12
    second = fit_rate([(e, 0.5 * e * e) for e in eps])
    assert second.slope == pytest.approx(2.0, abs=1e-12)


def test_fit_rate_scale_invariance():
    pts = [(0.4, 0.3), (0.2, 0.11), (0.1, 0.07), (0.05, 0.02)]
    a = fit_rate(pts)
    b = fit_rate([(p, 2 * e) for p, e in pts])
    assert b.slope == pytest.approx(a.slope, abs=1e-12)
    assert b.intercept == pytest.approx(a.intercept + math.log(2), abs=1e-12)
    assert b.residual == pytest.approx(a.residual, abs=1e-12)


def test_fit_rate_with_noise():
    rng = np.random.default_rng(11)
    eps = np.array([0.4, 0.2, 0.1, 0.05])
    slopes = [fit_rate(zip(eps, 2 * eps * (1 + 0.05 * rng.standard_normal(4)))).slope for _ in range(100)]
    assert max(abs(s - 1) for s in slopes) <= 0.1


def test_fit_rate_errors():
    with pytest.raises(ValueError, match="need ≥ 3 points"):
        fit_rate([(0.1, 0.2)])
    with pytest.raises(ValueError, match="positive"):
        fit_rate([(0.1, 0.2), (0.2, 0.0), (0.3, 0.1)])


def test_rate_fit_csv_row():
    fit = fit_rate([(1.0, 1.0), (2.0, 2.0), (4.0, 4.0)])
    name, slope, *_ = fit.csv_row("eps").split(",")
    assert name == "eps" and float(slope) == pytest.approx(1.0)


def test_commutator_vanishes_for_constant_g():
    g = Grid(1.0, 64)
    f = gaussian(g, 0.2)
    one = ScalarField(g, np.ones(g.shape))
    assert commutator_norm(f, one, 0.1, 2) == 0.0
    with pytest.raises(ValueError, match="undefined"):
        commutator_ratio(f, one, 0.1, 2)


def test_commutator_closed_form_for_linear_pair():
    # f = b·x, g = a·x: V*(fg) - (V*f) g = eps² (a·b) ∫ z_1² V
    grid = Grid(1.0, 256)
    eps = 0.1
    x, y = grid.mesh()
    a, b = np.array([0.7, -0.4]), np.array([1.3, 0.9])
    f = b[0] * x + b[1] * y
    g = a[0] * x + a[1] * y
    table = mollifier_table(grid, eps)
    fg, vf = convolve_arrays(f * g, grid, [table])[0], convolve_arrays(f, grid, [table])[0]
    comm = fg - vf * g
    inner = (np.abs(x) < 1 - 1.5 * eps) & (np.abs(y) < 1 - 1.5 * eps)
    exact = eps**2 * (a @ b) * mollifier_abs_moment(2, 2.0)
    assert np.abs(comm[inner] - exact).max() <= 1e-4 * abs(exact)


def test_commutator_ratio_bounded_across_eps():
    grid = Grid(1.0, 256)
    f = gaussian(grid, 0.15)
    x, y = grid.mesh()
    g = ScalarField(grid, np.sin(2 * x) * np.cos(y))
    ratios = [commutator_ratio(f, g, e, 2) for e in (0.2, 0.1, 0.05, 0.025)]
    assert max(ratios) / min(ratios) < 2.0 or ratios == sorted(ratios, reverse=True)
    assert all(r <= ratios[0] * 1.05 for r in ratios)


@pytest.mark.parametrize("d, m", [(2, 2.0), (2, 3.0), (3, 2.0)])
def test_barenblatt_mass_by_quadrature(d, m):
    t, mass = 0.1, 1.0
    radius = barenblatt_radius(t, m, d, mass)
    area = 2 * math.pi if d == 2 else 4 * math.pi

    def radial(r):
        x = np.zeros(d)
        x[0] = r
        return area * r ** (d - 1) * barenblatt(x, t, m, d, mass)

    val, _ = integrate.quad(radial, 0, radius, epsabs=0, epsrel=1e-12)
    assert val == pytest.approx(mass, abs=1e-6)


def test_barenblatt_constant_closed_form_2d_m2():
    # m = 2, d = 2: κ = 1/16, so M = π C² / (2κ) = 8π C²
    for mass in (0.25, 1.0, 3.0):
        assert barenblatt_constant(2.0, 2, mass) == pytest.approx(math.sqrt(mass / (8 * math.pi)), rel=1e-13)


def test_barenblatt_support_radius():
    t, m, d, mass = 0.1, 2.0, 2, 1.0
    r = barenblatt_radius(t, m, d, mass)
    assert barenblatt(np.array([r * (1 - 1e-9), 0.0]), t, m, d, mass) > 0
    assert barenblatt(np.array([r * (1 + 1e-12), 0.0]), t, m, d, mass) == 0.0
    assert barenblatt(np.array([0.0, r * 1.01]), t, m, d, mass) == 0.0


def test_barenblatt_rejects_bad_arguments():
    with pytest.raises(ValueError):
        barenblatt(np.zeros(2), 0.0, 2.0, 2)
    with pytest.raises(ValueError):
        barenblatt(np.zeros(2), 0.1, 1.0, 2)


def _pme_residual(n: int) -> float:
    grid = Grid(0.5, n)
    t, m, dt = 0.1, 2.0, 1e-5
    x = np.stack(grid.mesh(), axis=-1)
    du = (barenblatt(x, t + dt, m, 2) - barenblatt(x, t - dt, m, 2)) / (2 * dt)
    um = barenblatt(x, t, m, 2) ** m
    h = grid.h
    lap = (-4 * um[1:-1, 1:-1] + um[2:, 1:-1] + um[:-2, 1:-1] + um[1:-1, 2:] + um[1:-1, :-2]) / h**2
    r = grid.radius()[1:-1, 1:-1]
    inner = r < 0.5 * barenblatt_radius(t, m, 2, 1.0)
    return float(np.abs(du[1:-1, 1:-1] - lap)[inner].max())


def test_barenblatt_solves_pme_at_second_order():
    coarse, fine = _pme_residual(32), _pme_residual(64)
    assert coarse / fine > 3.5


def test_barenblatt_field_mass():
    grid = Grid(2.0, 256)
    assert barenblatt_field(grid, 0.1, 2.0, 0.25).mass() == pytest.approx(0.25, rel=1e-3)


def test_energy_balance_is_dissipative():
    # the upwind scheme only adds dissipation, so the discrete balance is a
    # small nonpositive number on every step
    grid = Grid(2.0, 64)
    params = SimParams(sigma=0.05, t_end=0.02)
    state = make_state(make_initial_data(gaussian(grid, 0.35), 0.05), params, "regularized")
    for _ in range(5):
        dt = stable_dt(state)
        nxt = step(state, dt=dt)
        a, b = state.u, nxt.u
        rate = (lq_norm(b, 2) ** 2 - lq_norm(a, 2) ** 2) / (2 * dt)
        balance = l2_energy_balance(a, b, dt, 0.05, 2.0)
        assert balance <= 0
        assert abs(balance) <= 0.01 * abs(rate)
        state = nxt
