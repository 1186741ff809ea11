import math

import numpy as np
import pytest

from kslab.core import (
    DIAGNOSTIC_COLUMNS,
    DiagnosticRecord,
    Grid,
    ScalarField,
    SimParams,
    Trajectory,
    VectorField,
    read_diagnostics,
    read_snapshot,
    validate,
    write_snapshot,
)


def test_grid_geometry():
    g = Grid(1.0, 4)
    assert g.h == 0.5
    np.testing.assert_array_equal(g.coords(), [-0.75, -0.25, 0.25, 0.75])
    assert g.shape == (4, 4)
    assert g.cell_volume == 0.25
    k = g.kernel_grid()
    assert k.n == 8 and not k.cell_centered
    assert k.h == g.h
    # index n of the kernel lattice is the zero offset
    assert k.coords()[g.n] == 0.0


def test_scalar_field_read_only_and_shape_checked(grid64):
    f = ScalarField.zeros(grid64)
    with pytest.raises(ValueError):
        f.values[0, 0] = 1.0
    with pytest.raises(ValueError):
        ScalarField(grid64, np.zeros(7))


def test_scalar_field_arithmetic(blob):
    twice = blob + blob
    assert twice.mass() == pytest.approx(2 * blob.mass(), rel=1e-14)
    assert (2.0 * blob - twice).max() == 0.0
    assert blob.reflect(0).mass() == pytest.approx(blob.mass(), rel=1e-14)
    with pytest.raises(ValueError):
        blob + ScalarField.zeros(Grid(2.0, 32))


def test_shift_drops_mass_leaving_the_box():
    g = Grid(1.0, 4)
    f = ScalarField(g, np.arange(16.0).reshape(4, 4))
    s = f.shift((1, -1))
    assert s.values[1, 0] == f.values[0, 1]
    assert s.values[0].sum() == 0.0


def test_vector_field_checks_component_count(grid64):
    with pytest.raises(ValueError):
        VectorField(grid64, [np.zeros(grid64.shape)])
    v = VectorField(grid64, [np.ones(grid64.shape), -2 * np.ones(grid64.shape)])
    assert v.max_abs() == 2.0


def test_snapshot_round_trip(tmp_path, blob):
    path = tmp_path / "u.bin"
    write_snapshot(path, blob, 0.125)
    raw = path.read_bytes()
    assert raw[:8] == b"KSFLD1\x00\x00"
    assert len(raw) == 32 + 8 * 64 * 64
    back, t = read_snapshot(path)
    assert t == 0.125
    assert back.grid == blob.grid
    np.testing.assert_array_equal(back.values, blob.values)


def test_snapshot_rejects_bad_magic(tmp_path, blob):
    path = tmp_path / "u.bin"
    write_snapshot(path, blob, 0.0)
    path.write_bytes(b"XXXXXXXX" + path.read_bytes()[8:])
    with pytest.raises(ValueError, match="magic"):
        read_snapshot(path)


def test_diagnostics_round_trip(tmp_path, blob):
    traj = Trajectory(SimParams(), blob.grid, "regularized")
    for k in range(3):
        traj.diagnostics.append(DiagnosticRecord.of(blob.values * (k + 1), blob.grid, 2.0, 0.1 * k, 0.1))
    path = tmp_path / "d.csv"
    traj.write_diagnostics(path)
    assert path.read_text().splitlines()[0] == ",".join(DIAGNOSTIC_COLUMNS)
    assert read_diagnostics(path) == traj.diagnostics


def test_diagnostic_record_values():
    g = Grid(1.0, 2)
    vals = np.array([[1.0, -1.0], [2.0, 0.0]])
    rec = DiagnosticRecord.of(vals, g, 2.0, 0.0, 0.0)
    assert rec.mass == 2.0
    assert rec.l1 == 4.0
    assert rec.l2 == pytest.approx(math.sqrt(6.0))
    assert rec.l2m == pytest.approx(18.0**0.25)
    assert rec.linf == 2.0 and rec.min == -1.0


def test_trajectory_snapshot_order(blob):
    traj = Trajectory(SimParams(), blob.grid, "regularized")
    traj.append_snapshot(0.0, blob)
    with pytest.raises(ValueError):
        traj.append_snapshot(0.0, blob)
    traj.append_snapshot(0.5, blob)
    assert traj.at(0.5) is blob
    with pytest.raises(KeyError):
        traj.at(0.25)


@pytest.mark.parametrize(
    "params, grid, kw, fragment",
    [
        (SimParams(m=1.0), Grid(1.0, 64), {}, "m=1 unsupported"),
        (SimParams(lam=0.8), Grid(1.0, 64), {}, "2λ ≥ 1/λ"),
        (SimParams(), Grid(1.0, 48), {}, "power of two"),
        (SimParams(d=3), Grid(1.0, 64), {}, "grid dimension"),
        (SimParams(sigma=-1.0), Grid(1.0, 64), {}, "negative"),
        (SimParams(eps_k=0.05, lam=0.01), Grid(1.0, 64), {"mollified": True}, "under-resolves eps_k"),
        (SimParams(lam=0.0), Grid(1.0, 64), {"mollified": True}, "lambda > 0"),
        (SimParams(m=2.5), Grid(1.0, 64), {"sigma_limit": True}, "m=2 or m>=3"),
    ],
)
def test_validate_messages(params, grid, kw, fragment):
    errors = validate(params, grid, **kw)
    assert any(fragment in e for e in errors), errors


def test_validate_accepts_defaults():
    assert validate(SimParams(lam=0.01, eps_k=0.2, eps_p=0.2), Grid(2.0, 128), mollified=True) == []
