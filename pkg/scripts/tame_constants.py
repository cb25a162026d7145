"""Fitted constants of the tame estimates at two sample sizes.

Writes one CSV per estimate into --out and prints the max ratio for the first
half and the full sample.
"""

import argparse
from pathlib import Path

from poisson_rigidity.norms import TAME_KINDS, TameSampleSpec, interpolation_sample_report, report_csv, tame_ratio_report


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=400)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="tame_reports")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = TameSampleSpec(count=args.samples, seed=args.seed)
    half = args.samples // 2
    print(f"{'estimate':<14}{'C(' + str(half) + ')':>12}{'C(' + str(args.samples) + ')':>12}{'skipped':>9}")
    for kind in TAME_KINDS + ("interpolation",):
        rep = interpolation_sample_report(spec) if kind == "interpolation" else tame_ratio_report(kind, spec)
        (out / f"{kind}.csv").write_text(report_csv(rep["rows"]))
        first = max((row[-1] for row in rep["rows"] if row[1] < half), default=0.0)
        print(f"{kind:<14}{first:>12.4f}{rep['max_ratio']:>12.4f}{rep['skipped']:>9}")


if __name__ == "__main__":
    main()
