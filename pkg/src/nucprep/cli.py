"""Command line entry point: ``nucprep <subcommand> --config FILE``.

Exit codes: 0 success, 1 numerical convergence failure, 2 I/O or config error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from . import analysis
from .config import ConfigError, PipelineConfig, load_config
from .pipeline import Artifacts, StageError, run_pipeline, stage_extrapolate

log = logging.getLogger("nucprep")

EXIT_OK, EXIT_CONVERGENCE, EXIT_IO = 0, 1, 2


def _common(p: argparse.ArgumentParser, config_required: bool = True) -> None:
    p.add_argument("--config", required=config_required, help="flat key = value config file")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", default=None, help="override the output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nucprep", description=(
        "Shell-model ground states: DMRG, staircase circuit compilation and Clifford+T synthesis."))
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("solve", "run DMRG and write MPS files and energies"),
        ("compress", "compress the chosen eigenstate to the target bond dimension"),
        ("compile", "grow staircase circuits layer by layer"),
        ("decompose", "lower circuits to Clifford + RZ with merged rotations"),
        ("synth", "synthesize Clifford+T circuits for every eps and strategy"),
        ("extrapolate", "reverse-sweep series and overlap extrapolation"),
        ("report", "write the report and Pareto CSV files"),
        ("pipeline", "run solve through report"),
    ):
        _common(sub.add_parser(name, help=help_text))
    b = sub.add_parser("bound", help="Wootters lower bound on |<a|c>| from |<a|b>| and |<b|c>|")
    b.add_argument("overlap_ab", type=float)
    b.add_argument("overlap_bc", type=float)
    return parser


def _load(args) -> tuple:
    cfg = load_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
        changes["dmrg"] = dataclasses.replace(cfg.dmrg, seed=args.seed)
    if args.out is not None:
        changes["out_dir"] = args.out
    cfg = dataclasses.replace(cfg, **changes) if changes else cfg
    return cfg, Artifacts(cfg.out_dir)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "bound":
        try:
            print(repr(analysis.wootters_bound(args.overlap_ab, args.overlap_bc)))
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_IO
        return EXIT_OK
    try:
        cfg, art = _load(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        if args.command == "pipeline":
            run_pipeline(cfg, art)
        elif args.command == "extrapolate":
            try:
                est, diag = stage_extrapolate(cfg, art)
            except ValueError as exc:
                raise StageError("extrapolate", str(exc), art.written, exit_code=EXIT_IO) from exc
            print(f"estimated |<Phi({cfg.target_chi})|Phi(inf)>|^2 = {est!r}")
        else:
            run_pipeline(cfg, art, [args.command])
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.completed:
            print("completed artifacts:", file=sys.stderr)
            for p in exc.completed:
                print(f"  {p}", file=sys.stderr)
        return exc.exit_code
    for p in art.written:
        print(p)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
