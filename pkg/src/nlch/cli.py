"""Command line interface.

Exit codes: 0 success, 2 configuration error, 3 certification failure,
4 blow-up, 5 study assertion failed.  ``NLCH_OUTPUT_DIR`` overrides the
configured output directory (``--out`` overrides both).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import OUTPUT_ENV, ConfigError, RunConfig
from .dynamics import BlowUpError
from .plotting import PlotError, emit_plots
from .scenarios import (
    CertificationError,
    StudyFailed,
    certify,
    run_contdep,
    run_limit_study,
    run_oracle_check,
    run_simulate,
    run_sweep,
)

EXIT_OK, EXIT_CONFIG, EXIT_CERT, EXIT_BLOWUP, EXIT_STUDY = 0, 2, 3, 4, 5

log = logging.getLogger("nlch")


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nlch", description=__doc__.split("\n")[0].rstrip("."),
                                     epilog=f"Output directory override: ${OUTPUT_ENV}.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (("simulate", "run one trajectory with an energy ledger"),
                           ("sweep", "simulate over values of alpha, epsilon or delta"),
                           ("limit-study", "compare with the rescaled isothermal equation as epsilon -> 0"),
                           ("certify", "certify kernel and potential hypotheses"),
                           ("oracle-check", "IMEX scheme against the Galerkin RK4 oracle"),
                           ("contdep", "continuous-dependence inequality on perturbed pairs"),
                           ("plots", "write plot data, a gnuplot script and PNGs for a run directory")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", metavar="PATH", help="configuration file (defaults if omitted)")
        p.add_argument("--out", metavar="DIR", help="output directory")
        p.add_argument("--seed", type=int, help="override initial_data.seed")
        p.add_argument("--force", action="store_true", help="run even if hypotheses are not certified")
        p.add_argument("--jobs", type=int, default=1, metavar="N", help="parallel worker processes")
        if name == "plots":
            p.add_argument("run_dir", nargs="?", help="run directory (defaults to --out)")
            p.add_argument("--stride", type=int, help="ledger decimation stride")
    return parser


def _load(args, scenario: str) -> RunConfig:
    cfg = RunConfig.load(args.config, validate=False) if args.config else RunConfig()
    if args.seed is not None:
        cfg.initial_data["seed"] = args.seed
    cfg.scenario = scenario
    cfg.validate()
    return cfg


def _print(report: dict):
    print(json.dumps(report, indent=2, sort_keys=True, default=str))


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "plots":
            run_dir = args.run_dir or args.out or (RunConfig.load(args.config).output_dir() if args.config else None)
            if run_dir is None:
                raise ConfigError("plots needs a run directory")
            for path in emit_plots(run_dir, args.stride):
                print(path)
            return EXIT_OK
        scenario = args.command.replace("-", "_")
        cfg = _load(args, scenario)
        if scenario == "simulate":
            _print(run_simulate(cfg, args.out, args.force, args.seed))
        elif scenario == "sweep":
            _print(run_sweep(cfg, args.out, args.jobs, args.force, args.seed))
        elif scenario == "limit_study":
            res = run_limit_study(cfg, args.out, args.seed)
            _print_gaps(res)
        elif scenario == "certify":
            report = certify(cfg, cfg.output_dir(args.out))
            _print(report)
            if not report["passed"]:
                return EXIT_CERT
        elif scenario == "oracle_check":
            res = run_oracle_check(cfg, args.out, seed=args.seed)
            _print(res)
            if not res["passed"]:
                return EXIT_STUDY
        elif scenario == "contdep":
            res = run_contdep(cfg, args.out, args.jobs, args.seed)
            print(f"pairs: {len(res['pairs'])}, violations: {res['violations']}")
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PlotError as exc:
        print(f"plot error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CertificationError as exc:
        print(f"certification failed: {exc}", file=sys.stderr)
        return EXIT_CERT
    except BlowUpError as exc:
        print(f"blow-up: {exc} (partial outputs kept)", file=sys.stderr)
        return EXIT_BLOWUP
    except StudyFailed as exc:
        if "gaps" in exc.report:
            _print_gaps(exc.report)
        print(f"study failed: {exc}", file=sys.stderr)
        return EXIT_STUDY
    return EXIT_OK


def _print_gaps(res: dict):
    print(f"{'epsilon':>12} {'beta':>10} {'gap':>14}")
    for e, g in zip(res["epsilons"], res["gaps"]):
        print(f"{e:12.4g} {res['beta']:10.4g} {g:14.6e}")


if __name__ == "__main__":
    sys.exit(main())
