"""Command line entry point.

    branchline validate    --config cfg.json [--out DIR] [--seed N]
    branchline approximate --config cfg.json ...
    branchline recover     --config cfg.json ...
    branchline sweep       --config cfg.json ...
    branchline report      --config cfg.json ...

Exit status: 0 all checks passed, 1 a check failed, 2 the run aborted with
an error (details under ``error`` in report.json).
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import load_config
from .errors import BranchlineError
from .pipeline import EXIT_ERROR, STAGES, run_pipeline, write_error_report

log = logging.getLogger("branchline")

_HELP = {
    "validate": "check the structure set and the fixture's coincidences",
    "approximate": "validate, then build and verify the band-degenerate approximation",
    "recover": "approximate, then recover the process from the configured data",
    "sweep": "approximation error over a halving sequence of band half widths",
    "report": "run every stage the config asks for and write plot data",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="branchline", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in STAGES:
        p = sub.add_parser(verb, help=_HELP[verb])
        p.add_argument("--config", required=True, help="experiment config (JSON)")
        p.add_argument("--out", default=None, help="output directory (overrides config 'outputs')")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config).with_seed(args.seed)
    except BranchlineError as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        if args.out is not None:
            write_error_report(args.out, args.verb, exc)
        return EXIT_ERROR
    result = run_pipeline(cfg, args.verb, args.out)
    rep = result.report
    for name, ok in rep["checks"].items():
        log.info("%-22s %s", name, "pass" if ok else "FAIL")
    if rep["error"]:
        print(f"error [{rep['error']['code']}]: {rep['error']['message']}", file=sys.stderr)
    print(f"{rep['experiment']}: {args.verb} {rep['status']} -> {result.out_dir / 'report.json'}")
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
