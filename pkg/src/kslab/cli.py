"""Command line entry point ``kslab``.

Exit codes: 0 pass, 2 failed check, 3 suspected blow-up, 4 config error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import config as cfgmod
from . import experiments

SUBCOMMANDS = {
    "run": "single_run",
    "sweep-epsilon": "epsilon_sweep",
    "sweep-sigma": "sigma_sweep",
    "sweep-eta": "eta_sweep",
    "particles": "particle_meanfield",
    "pme-oracle": "pme_oracle",
    "commutator": "commutator",
}

_HELP = {
    "run": "single solve or particle run",
    "sweep-epsilon": "non-local vs regularized error across kernel radii",
    "sweep-sigma": "vanishing-viscosity Cauchy check",
    "sweep-eta": "η-shifted diffusion vs the regularized solution",
    "particles": "particle KDE vs non-local PDE across N",
    "pme-oracle": "porous-medium solver against the Barenblatt profile",
    "commutator": "mollifier commutator ratio across ε",
}


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return value


def _threads(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("thread count must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kslab", description="Keller–Segel numerical laboratory")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name, help=_HELP[name])
        sp.add_argument("--config", required=True, help="YAML experiment config")
        sp.add_argument("--out", help="output directory (overrides the config)")
        sp.add_argument("--seed", type=_seed, help="seed (overrides params.seed and the first sweep seed)")
        sp.add_argument("--threads", type=_threads, default=1, help="numba worker threads (default 1)")
    return parser


def _set_threads(k: int) -> None:
    # The compiled kernels are serial; k > 1 only sizes numba's worker pool.
    if k == 1:
        return
    try:
        import numba
    except ImportError:
        return
    numba.set_num_threads(min(k, numba.config.NUMBA_NUM_THREADS))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = cfgmod.load(args.config).with_overrides(output=args.out, seed=args.seed)
        expected = SUBCOMMANDS[args.command]
        if cfg.experiment != expected:
            raise cfgmod.ConfigError(f"`{args.command}` expects experiment {expected!r}, config has {cfg.experiment!r}")
        _set_threads(args.threads)
        report = experiments.run(cfg)
    except (cfgmod.ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return experiments.EXIT_CONFIG
    print(report.text(), end="")
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
