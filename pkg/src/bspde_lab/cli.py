"""Command line entry point.

    bspde-lab run --config PATH [--out DIR] [--seed N] [--jobs K]
    bspde-lab control --config PATH ...     # same, and checks the config kind
    bspde-lab catalog                       # list shipped configs
    bspde-lab run --catalog NAME            # run a shipped config

Exit status: 0 verdict pass, 1 verdict fail, 2 bad config, 3 error raised by a module.
"""

from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path

from .errors import BSPDELabError, ConfigFileError
from .harness import KINDS, Config, run

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_MODULE = 0, 1, 2, 3


def catalog_dir() -> Path:
    return Path(str(resources.files("bspde_lab") / "catalog"))


def catalog_entries() -> dict[str, Path]:
    return {p.stem: p for p in sorted(catalog_dir().glob("*.json"))}


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bspde-lab", description="Backward stochastic heat equation experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("run",) + KINDS:
        p = sub.add_parser(name, help="run any config" if name == "run" else f"run a '{name}' config")
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--config", type=Path, help="JSON experiment config")
        src.add_argument("--catalog", metavar="NAME", help="name of a shipped config (see 'catalog')")
        p.add_argument("--out", type=Path, help="output directory (default: runs/<config name>)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for seed batteries")
    sub.add_parser("catalog", help="list shipped configs")
    return ap


def _print_catalog() -> int:
    for name, path in catalog_entries().items():
        raw = json.loads(path.read_text(encoding="utf-8"))
        print(f"{name:28s} {raw['kind']:14s} {raw.get('description', '')}")
    return EXIT_PASS


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "catalog":
        return _print_catalog()
    try:
        if args.catalog is not None:
            entries = catalog_entries()
            if args.catalog not in entries:
                raise ConfigFileError(f"no catalog config named {args.catalog!r} (have: {', '.join(entries)})")
            path = entries[args.catalog]
        else:
            path = args.config
        cfg = Config.load(path)
        if args.command != "run" and cfg.kind != args.command:
            cfg.fail("kind", f"is {cfg.kind!r} but the '{args.command}' subcommand was used")
        if args.jobs < 1:
            raise ConfigFileError("--jobs must be >= 1")
        out_dir = args.out if args.out is not None else Path("runs") / Path(path).stem
        result = run(cfg, out_dir, seed=args.seed, jobs=args.jobs)
    except ConfigFileError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BSPDELabError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_MODULE
    verdict = result.summary["verdict"]
    for name, ok in verdict["checks"].items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    print(f"{'PASS' if verdict['passed'] else 'FAIL'}  {cfg.kind} -> {out_dir}")
    return EXIT_PASS if verdict["passed"] else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
