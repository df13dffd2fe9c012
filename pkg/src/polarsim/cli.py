"""Command line entry point ``polarsim``."""
from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, load_config
from .records import write_record
from .studies import STUDIES, StudyError, run_simulation, steady_study

log = logging.getLogger("polarsim")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", metavar="DIR", help="output directory (overrides the config)")
    common.add_argument("--seed", type=int, help="seed for randomized studies (overrides the config)")
    common.add_argument("--threads", type=int, default=1, help="worker threads for independent runs")

    parser = argparse.ArgumentParser(prog="polarsim", description="Cell polarization solvers and verification studies.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", parents=[common], help="integrate the configured model")
    p.add_argument("config")
    p = sub.add_parser("study", parents=[common], help="run a verification study")
    p.add_argument("study", choices=sorted(STUDIES))
    p.add_argument("config")
    p = sub.add_parser("steady", parents=[common], help="compute the stationary state of the limit problem")
    p.add_argument("config")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    if args.threads < 1:
        log.error("--threads must be >= 1")
        return 2
    try:
        cfg = load_config(args.config)
        overrides = {}
        if args.out is not None:
            overrides["output"] = args.out
        if args.seed is not None:
            overrides["seed"] = args.seed
        if overrides:
            cfg = cfg.model_copy(update=overrides)
        if args.command == "run":
            record = run_simulation(cfg, args.threads)
        elif args.command == "steady":
            record = steady_study(cfg, args.threads)
        else:
            record = STUDIES[args.study](cfg, args.threads)
    except (ConfigError, StudyError, OSError) as err:
        log.error("error: %s", err)
        return 2
    out = write_record(record, cfg.output)
    for v in record.verdicts:
        log.info("%-30s %-4s measured=%.6g threshold=%.6g %s", v.name, "PASS" if v.passed else "FAIL",
                 v.measured, v.threshold, v.detail)
    log.info("wrote %s", out)
    return 0 if record.passed else 1


if __name__ == "__main__":
    sys.exit(main())
