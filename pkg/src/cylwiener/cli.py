"""Command-line entry point.

    cylwiener list-suites
    cylwiener run --config exp.json [--seed N] [--threads N] [--out report.csv]
    cylwiener sample-path --preset cylindrical --n 8 --steps 100 [--seed N] [--out path.csv]

Exit codes: 0 all checks pass, 1 a check failed, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from . import harness
from .covariance import PRESETS, preset
from .sampling import TimeGrid, cylindrical_path, sample_driver

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

SUITE_IDENTITIES = {
    "isometry": "Ito isometry for the integral built from scalar integrals",
    "covariance": "covariance kernel of the pairings; Q1 = JJ*",
    "tail": "Cauchy tail of the truncated integrals and its trace bound",
    "bridge": "cylindrical integral = Walsh integral",
    "walsh": "white-noise covariance and the worthy-measure L2 bound",
    "rates": "L2 convergence of the truncated cylindrical series",
}


def list_suites() -> str:
    lines = []
    for name, text in harness.SUITES.items():
        lines.append(f"{name:<11} {text}")
        lines.append(f"{'':<11} verifies: {SUITE_IDENTITIES[name]}")
    return "\n".join(lines)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cylwiener", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("list-suites", help="list verification suites")

    r = sub.add_parser("run", help="run a verification suite from a JSON config")
    r.add_argument("--config", required=True, type=Path)
    r.add_argument("--seed", type=int, help="override the seed in the config file")
    r.add_argument("--threads", type=int, default=1)
    r.add_argument("--out", type=Path, help="CSV report path (default: stdout)")

    s = sub.add_parser("sample-path", help="write one cylindrical Wiener path as CSV")
    s.add_argument("--preset", choices=PRESETS, default="cylindrical")
    s.add_argument("--n", type=int, default=8)
    s.add_argument("--m", type=int, help="truncation (default n)")
    s.add_argument("--steps", type=int, default=100)
    s.add_argument("--T", type=float, default=1.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", type=Path)
    return p


def _cmd_run(args) -> int:
    if args.threads < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return EXIT_USAGE
    try:
        text = args.config.read_text()
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = harness.load_config(text)
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, seed=args.seed)
            harness.validate(cfg)
    except harness.ConfigError as exc:
        print(f"error: {args.config}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    report = harness.run(cfg, threads=args.threads)
    csv_text = report.to_csv()
    if args.out:
        args.out.write_text(csv_text)
        if cfg.suite == "rates":
            args.out.with_suffix(".rates.csv").write_text(report.rates_csv())
        print(report.summary())
    else:
        sys.stdout.write(csv_text)
        print(report.summary(), file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_FAIL


def _cmd_sample_path(args) -> int:
    m = args.n if args.m is None else args.m
    try:
        triple = preset(args.preset, args.n)
        grid = TimeGrid.uniform(args.T, args.steps)
        path = cylindrical_path(sample_driver(grid, max(m, 1), args.seed), triple, m)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.out:
        with open(args.out, "w", newline="") as fh:
            path.write_csv(fh)
    else:
        path.write_csv(sys.stdout)
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "list-suites":
        print(list_suites())
        return EXIT_OK
    if args.command == "run":
        return _cmd_run(args)
    return _cmd_sample_path(args)


if __name__ == "__main__":
    sys.exit(main())
