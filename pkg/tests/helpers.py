import numpy as np

from kslab.core import Grid, ScalarField, SimParams
from kslab.kernels import mollified_potential_gradient, mollifier_gradient, mollifier_value
from kslab.pressure import PressureLaw

# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def gaussian(grid: Grid, std: float, mass: float = 1.0, center=None) -> ScalarField:
    x = np.stack(grid.mesh(), axis=-1)
    c = np.zeros(grid.d) if center is None else np.asarray(center)
    vals = np.exp(-np.sum((x - c) ** 2, axis=-1) / (2 * std**2))
    return ScalarField(grid, vals * mass / (vals.sum() * grid.cell_volume))


def pair_drift_oracle(x: np.ndarray, params: SimParams) -> np.ndarray:
    """Direct double sum over all pairs, from the kernel evaluators."""
    n = len(x)
    law = PressureLaw(params.m, params.lam)
    out = np.zeros_like(x)
    for i in range(n):
        diff = x[i] - x
        agg = mollified_potential_gradient(diff, params.eps_k).sum(axis=0) / n
        rho = mollifier_value(diff, params.eps_p).sum() / n
        grad = mollifier_gradient(diff, params.eps_p).sum(axis=0) / n
        out[i] = agg - law.prime(rho) * grad
    return out
