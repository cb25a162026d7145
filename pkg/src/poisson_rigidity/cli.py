"""Command line entry point.

Exit codes: 0 converged and verified, 1 ran but did not converge or failed a
post-run check, 2 bad configuration or input, 3 the mathematics refused
(harmonic obstruction, non-Poisson input, perturbation too large, divergence).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .cohomology import build_homotopy
from .errors import (
    ConfigError,
    DivergenceError,
    GenerationError,
    HarmonicObstruction,
    InputError,
    MonitorViolation,
    PreconditionError,
    StructuralError,
)
from .experiment import ExperimentConfig, load_algebra, run_experiment, summary_line
from .norms import TAME_KINDS, TameSampleSpec, report_csv, tame_ratio_report
from .stability import FoliationData, check_conditions

USAGE_ERRORS = (ConfigError, InputError, StructuralError)
MATH_ERRORS = (HarmonicObstruction, PreconditionError, DivergenceError, MonitorViolation, GenerationError)


def _radii(text: str) -> tuple[float, float]:
    try:
        R, r = (float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected R,r but got {text!r}") from None
    return R, r


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="poisson-rigidity", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="linearize a perturbed linear Poisson structure")
    run.add_argument("--algebra", default="so3", help="builtin name or JSON file")
    run.add_argument("--perturbation", default=None, help="JSON bivector; generated when omitted")
    run.add_argument("--kind", default="exact", choices=["exact", "random_poisson_deformation"])
    run.add_argument("--min-degree", type=int, default=2)
    run.add_argument("--magnitude", type=float, default=1e-3)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--trunc-order", type=int, default=16)
    run.add_argument("--mode", default="p1", choices=["p0", "p1"])
    run.add_argument("--smoothing", default="none", choices=["none", "degree_truncation"])
    run.add_argument("--radii", type=_radii, default=(0.9, 0.5), metavar="R,r")
    run.add_argument("--out", default=None, help="directory for history.csv, result.json, summary.json")
    run.add_argument("--rational", action="store_true", help="exact rational arithmetic")
    run.add_argument("--max-steps", type=int, default=32)

    fol = sub.add_parser("check-foliation", help="rank conditions for a trivial symplectic foliation")
    fol.add_argument("data", help="FoliationData JSON file")

    tame = sub.add_parser("tame-report", help="measured constants of the tame estimates (CSV)")
    tame.add_argument("--kind", choices=TAME_KINDS, required=True)
    tame.add_argument("--samples", type=int, default=200)
    tame.add_argument("--seed", type=int, default=0)
    tame.add_argument("--out", default=None, help="CSV path; stdout when omitted")

    har = sub.add_parser("homotopy-report", help="harmonic dimensions and spectral gaps per slice")
    har.add_argument("--algebra", default="so3")
    har.add_argument("--k-max", type=int, default=10)
    return parser


def _cmd_run(args) -> int:
    R, r = args.radii
    cfg = ExperimentConfig(
        algebra=args.algebra, perturbation=args.perturbation, kind=args.kind, min_degree=args.min_degree,
        magnitude=args.magnitude, seed=args.seed, trunc_order=args.trunc_order, mode=args.mode,
        smoothing=args.smoothing, R=R, r=r, out=args.out, rational=args.rational, max_steps=args.max_steps,
    )
    code, summary = run_experiment(cfg)
    print(summary_line(summary))
    return code


def _cmd_foliation(args) -> int:
    report = check_conditions(FoliationData.load(args.data))
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0 if report["equivalent_H2_AS_zero"] else 1


def _cmd_tame(args) -> int:
    rep = tame_ratio_report(args.kind, TameSampleSpec(count=args.samples, seed=args.seed))
    text = report_csv(rep["rows"])
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    print(f"kind={args.kind} rows={len(rep['rows'])} skipped={rep['skipped']} max_ratio={rep['max_ratio']:.6e}",
          file=sys.stderr)
    return 0


def _cmd_homotopy(args) -> int:
    h = build_homotopy(load_algebra(args.algebra), args.k_max, diagnose=(1, 2))
    print(json.dumps(h.diagnostics_json(), indent=2))
    return 0


COMMANDS = {"run": _cmd_run, "check-foliation": _cmd_foliation, "tame-report": _cmd_tame,
            "homotopy-report": _cmd_homotopy}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except USAGE_ERRORS as exc:
        return _fail(exc, 2)
    except MATH_ERRORS as exc:
        return _fail(exc, 3)


def _fail(exc: Exception, code: int) -> int:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
