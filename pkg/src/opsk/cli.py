"""Command-line front end.

Every subcommand except ``thresholds`` reads a ``key = value`` config file
(see :mod:`opsk.config`) and writes one CSV row per grid point: sweep axes
first, metrics after. Floats carry 17 significant digits so values
round-trip exactly.

Exit codes: 0 success, 1 usage or config error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import logging
import math
import sys
from typing import Dict, Iterable, List, Optional, Sequence, TextIO

import numpy as np

from .config import ConfigError, ParsedConfig, parse_config
from .perceptual import BitAllocation, build_thresholds
from .simulation import DEFAULT_M, adaptive_extension_analysis, random_distributions, sweep

logger = logging.getLogger("opsk")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

SWEEP_MODES = {
    "ser1": "type1",
    "ser2": "type2",
    "run": "run",
    "rate": "rate",
    "mass-ratio": "mass_ratio",
}

ADAPTIVE_COLUMNS = [
    "allocation",
    "distribution",
    "initial_runtime",
    "total_symbols",
    "extension_percent",
    "updates",
    "final_allocation",
]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    if isinstance(v, tuple):
        # per-axis FNR collapses to one value when the axes agree
        if len(set(v)) == 1:
            return format_value(v[0])
        return " ".join(format_value(x) for x in v)
    return str(v)


def write_rows(out: TextIO, header: Sequence[str], rows: Iterable[Dict[str, object]]) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([format_value(row[h]) for h in header])


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="opsk", description="Odor-based perceptual shift keying link simulator.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    th = sub.add_parser("thresholds", help="print the class thresholds for n bits")
    th.add_argument("--n", type=int, required=True, help="bits on one dimension")

    helps = {
        "ser1": "filtering (type-1) SER with a noise-free processor",
        "ser2": "decoding (type-2) SER with a noise-free channel, plus its closed form",
        "run": "SER with every noise source active",
        "rate": "planned absorption time and symbol rate",
        "mass-ratio": "expected share of a puff inside the receiver",
        "adaptive": "operation-time extension from adaptive updates",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, metavar="PATH")
        p.add_argument("--out", metavar="PATH", help="CSV destination (default: stdout)")
        p.add_argument("--seed", type=_u64, metavar="U64")
        p.add_argument("--threads", type=_threads, default=1, metavar="N")
    return parser


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


def _threads(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError("threads must be >= 1")
    return v


def load(args) -> ParsedConfig:
    cfg = parse_config(args.config)
    if args.seed is not None:
        if any(a.name == "seed" for a in cfg.axes):
            raise ConfigError("--seed conflicts with a seed sweep", path=cfg.path)
        cfg = cfg.override(seed=args.seed)
    return cfg


def run_sweep(cfg: ParsedConfig, mode: str, threads: int) -> tuple[List[str], List[Dict[str, object]]]:
    cfg.require("distance")
    grid = cfg.grid()
    axes = cfg.axis_fields()
    rows = sweep(grid, mode, axes=axes, threads=threads)
    header = list(rows[0].keys())
    return header, rows


def run_adaptive(cfg: ParsedConfig) -> tuple[List[str], List[Dict[str, object]]]:
    unknown = [a.name for a in cfg.axes if a.name != "allocation"]
    if unknown:
        raise ConfigError(f"adaptive analysis can only sweep allocation, not {unknown}", path=cfg.path)
    allocs: List[BitAllocation]
    swept = [a for a in cfg.axes if a.name == "allocation"]
    if swept:
        allocs = list(swept[0].values)  # type: ignore[arg-type]
    else:
        allocs = [cfg.values.get("allocation", BitAllocation(1, 1, 1))]  # type: ignore[list-item]
    M = float(cfg.values.get("M", DEFAULT_M))  # type: ignore[arg-type]
    seed = int(cfg.values.get("seed", 0))  # type: ignore[arg-type]
    capsule = float(cfg.adaptive.get("capsule_mass", 1e4 * M))  # type: ignore[arg-type]
    count = int(cfg.adaptive.get("distributions", 4))  # type: ignore[arg-type]
    policy = cfg.policy()

    rows = []
    for a in allocs:
        dists = random_distributions(a.n_classes, count, seed)
        for r in adaptive_extension_analysis(a, dists, policy, capsule, M, seed=seed):
            rows.append({
                "allocation": r.allocation,
                "distribution": r.distribution,
                "initial_runtime": r.initial_runtime,
                "total_symbols": r.total_symbols,
                "extension_percent": r.extension_percent,
                "updates": sum(1 for u in r.updates if u.new is not None),
                "final_allocation": r.final_allocation,
            })
    return ADAPTIVE_COLUMNS, rows


@contextlib.contextmanager
def _open_out(path: Optional[str]):
    if path is None:
        yield sys.stdout
        return
    with open(path, "w", newline="") as fh:
        yield fh


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"opsk: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        # --help
        return EXIT_OK if not exc.code else EXIT_USAGE

    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s")

    if args.command == "thresholds":
        if not 0 <= args.n <= 8:
            print("opsk: error: --n must lie in 0..8", file=sys.stderr)
            return EXIT_USAGE
        print(",".join(format_value(t) for t in build_thresholds(args.n)))
        return EXIT_OK

    try:
        cfg = load(args)
        if args.command != "adaptive":
            # fail on bad grids before touching the output file
            cfg.require("distance")
            cfg.grid()
    except ConfigError as exc:
        print(f"opsk: error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    try:
        with _open_out(args.out) as out:
            if args.command == "adaptive":
                header, rows = run_adaptive(cfg)
            else:
                header, rows = run_sweep(cfg, SWEEP_MODES[args.command], args.threads)
            write_rows(out, header, rows)
    except ConfigError as exc:
        print(f"opsk: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"opsk: error: cannot write {args.out}: {exc.strerror}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, RuntimeError) as exc:
        print(f"opsk: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
