"""Command-line entry point: one subcommand per experiment.

Precedence for settings: --override flags > --config file > defaults.
The output directory comes from --out-dir, else the BAYESLFD_OUT_DIR
environment variable, else ./results.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import torch

from . import __version__
from .config import config_echo_lines, parse_config_file, parse_override, resolve_config
from .experiments import EXPERIMENTS

OUT_DIR_ENV = "BAYESLFD_OUT_DIR"


def write_csv(path: str, fieldnames: list[str], rows: list[dict], header_lines: list[str]) -> None:
    with open(path, "w", newline="") as f:
        for line in header_lines:
            f.write(f"# {line}\n")
        writer = csv.DictWriter(f, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bayeslfd",
        description="Uncertainty-aware learning-from-demonstration experiments",
    )
    parser.add_argument("--version", action="version", version=f"bayeslfd {__version__}")
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--out-dir", help=f"output directory (default ${OUT_DIR_ENV} or ./results)")
        p.add_argument("--seeds", help="comma-separated seed list (shorthand for an override)")
        p.add_argument(
            "--override",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override one config key; repeatable",
        )
    return parser


def run_command(args: argparse.Namespace) -> list[str]:
    runner, defaults = EXPERIMENTS[args.experiment]
    file_values = parse_config_file(args.config) if args.config else {}
    overrides = [parse_override(item) for item in args.override]
    if args.seeds:
        overrides.append(("seeds", args.seeds))
    cfg = resolve_config(defaults, file_values, overrides)
    out_dir = args.out_dir or os.environ.get(OUT_DIR_ENV) or "results"
    os.makedirs(out_dir, exist_ok=True)
    header = [f"experiment={args.experiment}"] + config_echo_lines(cfg, __version__)
    outputs = runner(cfg)
    written = []
    for filename, (fieldnames, rows) in outputs.items():
        path = os.path.join(out_dir, filename)
        write_csv(path, fieldnames, rows, header)
        written.append(path)
    return written


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    torch.set_num_threads(1)  # keeps reruns byte-identical regardless of host cores
    try:
        written = run_command(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
