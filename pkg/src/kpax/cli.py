"""Command-line interface.

Subcommands: density, project, convergence, upwind, cache.  Each takes
--config PATH plus optional --out DIR, --workers N, --seed S overrides and
a --plot/--no-plot toggle for figure rendering.  Exit codes: 0 success,
2 config error, 3 numerical or integrity failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .approx import NoPerfectMatchingError, SeamViolationError
from .cache import CacheIntegrityError, CorruptCacheError
from .config import ConfigError, load_config
from .flows import NumericalBlowupError
from .spectral import BandRangeError, ObservableValueError
from . import runs

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

_NUMERIC_ERRORS = (
    NoPerfectMatchingError,
    SeamViolationError,
    NumericalBlowupError,
    ObservableValueError,
    BandRangeError,
    CorruptCacheError,
    CacheIntegrityError,
)

log = logging.getLogger("kpax")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="kpax",
        description="Koopman spectra of measure-preserving flows by periodic approximation",
    )
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("density", "spectrum + mollified density CSVs"),
        ("project", "band-projection grid CSVs"),
        ("convergence", "refinement-chain diagnostics table"),
        ("upwind", "Ulam circulant eigenvalue sweep"),
        ("cache", "build/verify a permutation cache file"),
    ]:
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", required=True, help="run config (key=value file)")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--workers", type=int, default=None, help="worker count")
        sp.add_argument("--seed", type=int, default=None, help="sampling seed")
        sp.add_argument(
            "--plot",
            action=argparse.BooleanOptionalAction,
            default=True,
            help="render figures next to the CSVs",
        )
        sp.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    overrides = {
        "out_dir": args.out,
        "workers": args.workers,
        "seed": args.seed,
    }
    try:
        cfg = load_config(args.config, overrides)
        if args.command == "density":
            res = runs.run_density(cfg, plot=args.plot)
        elif args.command == "project":
            res = runs.run_projection(cfg, plot=args.plot)
        elif args.command == "convergence":
            res = runs.run_convergence(cfg, plot=args.plot)
        elif args.command == "upwind":
            res = runs.run_upwind(cfg, plot=args.plot)
        elif args.command == "cache":
            res = runs.run_cache(cfg)
        else:  # pragma: no cover - argparse enforces choices
            raise ConfigError(f"unknown command {args.command}")
    except ConfigError as e:
        log.error("config error: %s", e)
        return EXIT_CONFIG
    except _NUMERIC_ERRORS as e:
        log.error("%s: %s", type(e).__name__, e)
        return EXIT_NUMERIC
    for name, path in sorted(res.files.items()):
        log.info("wrote %s (%s)", path, name)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
