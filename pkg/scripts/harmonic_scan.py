"""Harmonic dimensions and spectral gaps of every builtin algebra, slice by slice."""

import argparse

from poisson_rigidity.cohomology import build_homotopy
from poisson_rigidity.lie import BUILTIN, builtin, compact_center_check


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--k-max", type=int, default=6)
    ap.add_argument("--algebras", nargs="*", default=sorted(BUILTIN))
    args = ap.parse_args()

    for name in args.algebras:
        g = builtin(name)
        if g.dim < 2:
            print(f"{name:<9} skipped: no bivectors in dimension {g.dim}")
            continue
        rep = compact_center_check(g)
        rows = build_homotopy(g, args.k_max, diagnose=(1, 2)).diagnostics_json()
        harmonic = {(r["q"], r["k"]): r["harmonic_dim"] for r in rows if r["harmonic_dim"]}
        gaps = [r["min_nonzero_eigenvalue"] for r in rows if r["min_nonzero_eigenvalue"] is not None]
        print(f"{name:<9} compact={rep.is_compact_type} center={rep.center_dim} "
              f"min_gap={min(gaps, default=float('nan')):.3e} harmonic={harmonic or 'none'}")


if __name__ == "__main__":
    main()
