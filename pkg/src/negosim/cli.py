"""Command line entry point: ``negosim simulate|analyze|report|ipip``.

Exit status is 0 on success, 1 for configuration or input-format problems
and 2 for runtime failures.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import __version__
from .errors import ConfigError, NegosimError, ScenarioFileError, TableFormatError
from .runner import (
    CORPUS_NAME,
    DEFAULT_MIN_STRATEGY_COUNT,
    RunConfig,
    analyze,
    report,
    run_ipip,
    simulate,
)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("negosim")


def _load_config(args) -> RunConfig:
    config = RunConfig.from_file(args.config)
    overrides = {}
    if getattr(args, "output_dir", None):
        overrides["output_dir"] = args.output_dir
    if getattr(args, "n", None) is not None:
        overrides["n_dialogues"] = args.n
    if getattr(args, "workers", None) is not None:
        overrides["workers"] = args.workers
    return dataclasses.replace(config, **overrides) if overrides else config


def cmd_simulate(args) -> int:
    config = _load_config(args)
    manifest = simulate(config, force=args.force)
    failed = sum(manifest.failed.values())
    print(f"{manifest.requested} requested, {manifest.completed} successful, {failed} failed "
          f"-> {Path(config.output_dir) / CORPUS_NAME}")
    return EXIT_OK


def _corpus_path(p: str) -> Path:
    path = Path(p)
    return path / CORPUS_NAME if path.is_dir() else path


def cmd_analyze(args) -> int:
    corpus = _corpus_path(args.corpus)
    out = args.out or corpus.parent / "analysis"
    a = analyze(corpus, out, force=args.force, strategy_map=args.strategy_map, min_strategy_count=args.min_strategy_count)
    anr = "n/a" if a.summary.anr is None else f"{a.summary.anr:.2f}"
    print(f"{a.summary.n} dialogues, NSR {a.summary.nsr:.3f}, ANR {anr} -> {out}")
    return EXIT_OK


def cmd_report(args) -> int:
    corpus = _corpus_path(args.corpus)
    out = args.out or corpus.parent / "report"
    res = report(corpus, out, force=args.force)
    print(f"{res['summary'].n} dialogues in {len(res['categories'])} categories -> {out}")
    return EXIT_OK


def cmd_ipip(args) -> int:
    config = _load_config(args)
    res = run_ipip(config, n_agents=args.agents)
    print(f"{res.n_agents} agents scored -> {Path(config.output_dir) / 'ipip_grid.csv'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="negosim", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a batch of dialogues into a JSONL corpus")
    p.add_argument("--config", required=True)
    p.add_argument("--output-dir")
    p.add_argument("-n", type=int, help="override the number of dialogues")
    p.add_argument("--workers", type=int)
    p.add_argument("--force", action="store_true", help="append to a corpus from a different configuration")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="metrics, trait correlations, strategy regressions and chi-square tests")
    p.add_argument("corpus", help="corpus file or run directory")
    p.add_argument("--out")
    p.add_argument("--force", action="store_true", help="analyse a corpus mixing configurations")
    p.add_argument("--strategy-map")
    p.add_argument("--min-strategy-count", type=int, default=DEFAULT_MIN_STRATEGY_COUNT)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("report", help="price versus dialogue length series per category")
    p.add_argument("corpus", help="corpus file or run directory")
    p.add_argument("--out")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("ipip", help="IPIP-50 validation of persona instructions")
    p.add_argument("--config", required=True)
    p.add_argument("--output-dir")
    p.add_argument("--agents", type=int)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_ipip)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ScenarioFileError, TableFormatError) as exc:
        print(f"negosim: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NegosimError, OSError, ValueError) as exc:
        print(f"negosim: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
