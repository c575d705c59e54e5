"""Command line: ``resmin run --benchmark lshape --degree 1,2 --levels 20 --out results``."""
from __future__ import annotations

import argparse
import logging
import platform
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import scipy

from . import report
from .adapt import adaptive_loop
from .linalg import ORDERING, SolverError
from .problems import REGISTRY, get_benchmark
from .solver import NewtonConfig

EXIT_OK, EXIT_USAGE, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("resmin")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    benchmark: str
    degrees: tuple
    levels: int
    out: str
    eta_ref: float = 0.25
    newton_tol: float = 1e-6
    newton_max_iter: int = 50
    plots: bool = False
    dg_reference: bool = False

    def __post_init__(self):
        if not self.degrees or any(p not in (1, 2, 3, 4) for p in self.degrees):
            raise ConfigError("degrees must be taken from 1..4")
        if self.levels < 1:
            raise ConfigError("levels must be at least 1")
        if not 0.0 < self.eta_ref <= 1.0:
            raise ConfigError("eta_ref must lie in (0, 1]")
        if self.newton_tol <= 0:
            raise ConfigError("newton_tol must be positive")
        if self.newton_max_iter < 1:
            raise ConfigError("newton_max_iter must be at least 1")


def _degrees(text) -> tuple:
    try:
        return tuple(int(t) for t in str(text).replace(" ", "").split(",") if t)
    except ValueError:
        raise ConfigError(f"bad degree list {text!r}") from None


def _bool(text) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"bad boolean {text!r}")


_KEYS = {
    "benchmark": str,
    "degree": _degrees,
    "degrees": _degrees,
    "levels": int,
    "eta_ref": float,
    "newton_tol": float,
    "newton_max_iter": int,
    "plots": _bool,
    "dg_reference": _bool,
    "out": str,
}


def read_config_file(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    values = {}
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{n}: expected 'key = value'")
            key, val = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in _KEYS:
                raise ConfigError(f"{path}:{n}: unknown key {key!r}")
            try:
                values["degrees" if key == "degree" else key] = _KEYS[key](val)
            except ValueError as exc:
                raise ConfigError(f"{path}:{n}: {exc}") from None
    return values


def parse_config(args: argparse.Namespace) -> RunConfig:
    values = read_config_file(args.config) if args.config else {}
    flags = {
        "benchmark": args.benchmark,
        "degrees": _degrees(args.degree) if args.degree is not None else None,
        "levels": args.levels,
        "eta_ref": args.eta_ref,
        "newton_tol": args.newton_tol,
        "newton_max_iter": args.newton_max_iter,
        "plots": True if args.plots else None,
        "dg_reference": True if args.dg_reference else None,
        "out": args.out,
    }
    values.update({k: v for k, v in flags.items() if v is not None})
    missing = [k for k in ("benchmark", "degrees", "levels", "out") if k not in values]
    if missing:
        raise ConfigError(f"missing settings: {', '.join(missing)}")
    return RunConfig(**values)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="resmin", description="Adaptive residual-minimization studies.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an adaptive study")
    run.add_argument("--benchmark", help=f"one of: {', '.join(REGISTRY)}")
    run.add_argument("--degree", help="comma-separated polynomial degrees, e.g. 1,2")
    run.add_argument("--levels", type=int)
    run.add_argument("--eta-ref", type=float, help="marking fraction (default 0.25)")
    run.add_argument("--newton-tol", type=float, help="Newton tolerance (default 1e-6)")
    run.add_argument("--newton-max-iter", type=int)
    run.add_argument("--plots", action="store_true", help="write SVG convergence plots")
    run.add_argument("--dg-reference", action="store_true", help="also solve the plain dG problem")
    run.add_argument("--out", help="output directory")
    run.add_argument("--config", help="key = value configuration file; flags take precedence")
    sub.add_parser("list", help="list benchmarks")
    return parser


def run(config: RunConfig) -> int:
    try:
        get_benchmark(config.benchmark)
    except KeyError as exc:
        print(f"resmin: {exc.args[0]}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(config.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"resmin: cannot create {out}: {exc}", file=sys.stderr)
        return EXIT_IO
    newton = NewtonConfig(tol=config.newton_tol, max_iter=config.newton_max_iter)
    for p in config.degrees:
        bench = get_benchmark(config.benchmark)
        t0 = time.perf_counter()
        try:
            result = adaptive_loop(
                bench, p, config.levels, eta_ref=config.eta_ref, newton=newton, dg_reference=config.dg_reference
            )
        except (SolverError, FloatingPointError) as exc:
            print(f"resmin: {config.benchmark}, p={p}: solver failure: {exc}", file=sys.stderr)
            return EXIT_SOLVER
        wall = time.perf_counter() - t0
        stem = out / f"{config.benchmark}_p{p}"
        try:
            report.write_csv(result, stem.with_suffix(".csv"))
            if config.plots:
                report.write_plot(result, stem.with_suffix(".svg"), f"{config.benchmark}, p = {p}")
            report.write_metadata(
                stem.with_suffix(".json"),
                config=asdict(config),
                degree=p,
                tolerances={"newton_tol": config.newton_tol, "linear_solve_rel_residual": 1e-9},
                ordering=ORDERING,
                wall_time_s=wall,
                rates_last5=report.rates(result),
                versions={"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__},
            )
        except OSError as exc:
            print(f"resmin: cannot write results: {exc}", file=sys.stderr)
            return EXIT_IO
        log.info("%s p=%d: %d levels in %.1f s", config.benchmark, p, len(result.records), wall)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command == "list":
        print("\n".join(REGISTRY))
        return EXIT_OK
    try:
        config = parse_config(args)
    except (ConfigError, OSError) as exc:
        print(f"resmin: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
