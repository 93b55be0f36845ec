"""Command line entry point: ``homog <command> --scenario NAME|PATH ...``.

Exit codes: 0 success, 1 an asserted tolerance failed, 2 usage or runtime error.
The thread count of the BLAS pools and of the scan workers is read from
HOMOG_NUM_THREADS.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from .errors import HomogError
from .pipeline import Options, run_pipeline
from .report import emit_report, report_markdown
from .scenarios import BUILTINS, load_scenario

THREADS_ENV = "HOMOG_NUM_THREADS"

COMMANDS = {
    "effective": ["correctors"],
    "germ": ["germ"],
    "bands": ["bands"],
    "fit": ["fit"],
    "scan": ["scan"],
    "probe": ["probes"],
    "selftest": ["abstract-selftest"],
}

log = logging.getLogger("homog")


def _floats(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {text!r}") from exc


def _param(text: str):
    key, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    try:
        return key, float(value)
    except ValueError:
        return key, value


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="homog", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--scenario", help=f"builtin ({', '.join(BUILTINS)}) or JSON path")
    p.add_argument("--param", action="append", type=_param, default=[],
                   help="builtin parameter, e.g. c=0.2 (repeatable)")
    p.add_argument("--cutoff", type=float, help="plane-wave cutoff radius |b| <= N")
    p.add_argument("--out", type=Path, help="output directory (default homog_out/<scenario>)")
    p.add_argument("--assert", dest="assert_mode", action="store_true",
                   help="exit 1 if any recorded tolerance fails")
    p.add_argument("--stability", action="store_true",
                   help="also rerun at doubled cutoff and compare")
    p.add_argument("--sup-only", action="store_true", help="scan CSV keeps only sup rows")
    p.add_argument("--eps", type=_floats, help="scan eps grid, comma separated")
    p.add_argument("--tau", type=_floats, help="scan tau grid, comma separated")
    p.add_argument("--s", type=_floats, help="scan smoothing exponents, comma separated")
    p.add_argument("--theta-count", type=int, help="scan directions per sphere")
    p.add_argument("--seed", type=int, help="selftest seed")
    p.add_argument("--families", type=int, help="selftest family count")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _threads() -> int | None:
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return None
    try:
        return max(1, int(raw))
    except ValueError:
        log.warning("ignoring %s=%r", THREADS_ENV, raw)
        return None


def run(args: argparse.Namespace) -> int:
    stages = list(COMMANDS[args.command])
    if args.stability:
        stages.append("stability")
    scenario = None
    if args.command != "selftest" or args.scenario:
        if not args.scenario:
            raise HomogError(f"{args.command} needs --scenario")
        scenario = load_scenario(args.scenario, **dict(args.param)).with_cutoff(args.cutoff)
    opts = Options(sup_only=args.sup_only, scan_theta_count=args.theta_count,
                   eps_grid=args.eps, tau_grid=args.tau, s_grid=args.s)
    if args.seed is not None:
        opts.seed = args.seed
    if args.families is not None:
        opts.families = args.families
    report = run_pipeline(scenario, stages, opts)
    out = args.out or Path("homog_out") / report.scenario
    for path in emit_report(report, out):
        log.info("wrote %s", path)
    sys.stdout.write(report_markdown(report))
    if args.assert_mode and not report.passed:
        return 1
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        with threadpool_limits(limits=_threads()):
            return run(args)
    except (HomogError, ValueError, OSError) as exc:
        print(f"homog: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
