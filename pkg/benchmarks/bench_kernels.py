"""Time the compiled and numpy paths of each hot kernel side by side.

    python3 benchmarks/bench_kernels.py [--repeat 3]

Both paths are called directly, so the env flag does not matter here. The
first compiled call is a warm-up and is not timed.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from kslab import _accel
from kslab import particles as P
from kslab.core import Grid, SimParams
from kslab.fluxes import flux_divergence_numba, flux_divergence_numpy


def _best(fn, repeat: int) -> float:
    fn()
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def cases():
    rng = np.random.default_rng(0)
    for n in (128, 256):
        u = rng.random((n, n))
        pot = rng.random((n, n))
        grad = (rng.standard_normal((n, n)), rng.standard_normal((n, n)))
        yield (
            f"flux divergence n={n}",
            lambda u=u, pot=pot, grad=grad: flux_divergence_numba(u, pot, grad, 0.05, 0.03, True),
            lambda u=u, pot=pot, grad=grad: flux_divergence_numpy(u, pot, grad, 0.05, 0.03, True),
        )
    params = SimParams(sigma=0.05, eps_k=0.2, eps_p=0.2, lam=1e-3)
    for n in (1000, 4000):
        x = rng.normal(0.0, 0.4, (n, 2))
        yield (
            f"pair sums N={n}",
            lambda x=x: P._pair_sums_numba(x, params, True, True),
            lambda x=x: P._pair_sums_numpy(x, params, True, True),
        )
    grid = Grid(2.0, 128)
    x = rng.normal(0.0, 0.4, (16000, 2))
    yield (
        "KDE deposit N=16000 n=128",
        lambda: P._deposit_numba(x, 0.2, grid),
        lambda: P._deposit_numpy(x, 0.2, grid),
    )


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)
    if not _accel.HAVE_NUMBA:
        print("numba is not installed; only the numpy path exists")
    print(f"{'kernel':<28}{'numba [s]':>12}{'numpy [s]':>12}{'speedup':>10}")
    for name, fast, slow in cases():
        a, b = _best(fast, args.repeat), _best(slow, args.repeat)
        print(f"{name:<28}{a:>12.4f}{b:>12.4f}{b / a:>9.1f}x")


if __name__ == "__main__":
    main()
