"""Command-line entry point ``mfldp``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import KINDS, load_config
from .errors import ConfigError, MFLDPError, NumericalFailure
from .experiments import run_experiment

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mfldp", description="Mean-field Gibbs measure experiments.")
    p.add_argument("command", choices=KINDS, help="experiment to run")
    p.add_argument("--config", required=True, help="TOML or JSON experiment file")
    p.add_argument("--out", help="output directory (default from config or mfldp-<command>)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--trace", action="store_true", help="include iterate histories in reports")
    p.add_argument("--strict", action="store_true",
                   help="treat non-convergence as a numerical failure (exit 3)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if cfg["kind"] != args.command:
            raise ConfigError(f"config kind {cfg['kind']!r} does not match command "
                              f"{args.command!r}", ["kind"])
        if args.strict:
            cfg["strict"] = True
        manifest = run_experiment(cfg, args.out, args.seed, args.trace,
                                  base=Path(args.config).parent)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except MFLDPError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    summary = {"kind": manifest["kind"], "config_hash": manifest["config_hash"],
               "seed": manifest["seed"], "files": manifest["files"]}
    print(json.dumps(summary))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
