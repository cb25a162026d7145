"""Largest perturbation magnitude for which the float iteration still converges.

Scans a geometric grid of magnitudes per seed and reports ||Z_0||_{p,R} and the
outcome of each run (converged, refused by the schedule, or diverged).
"""

import argparse

import numpy as np

from poisson_rigidity.cohomology import build_homotopy
from poisson_rigidity.errors import DivergenceError, MonitorViolation, NotPoissonError, PerturbationTooLarge
from poisson_rigidity.experiment import ExperimentConfig, generate_perturbation
from poisson_rigidity.lie import builtin, linear_poisson
from poisson_rigidity.nashmoser import RunConfig, derivative_orders, run
from poisson_rigidity.norms import tube_norm


def outcome(pi, pi_tilde, h, g, max_steps):
    try:
        res = run(pi, pi_tilde, RunConfig(max_steps=max_steps), h=h, g=g)
    except PerturbationTooLarge:
        return "too_large"
    except (DivergenceError, MonitorViolation, NotPoissonError) as exc:
        return type(exc).__name__
    return f"converged:{res.steps}" if res.converged else "not_converged"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--trunc-order", type=int, default=11)
    ap.add_argument("--lo", type=float, default=1e-4)
    ap.add_argument("--hi", type=float, default=1e-1)
    ap.add_argument("--points", type=int, default=10)
    ap.add_argument("--max-steps", type=int, default=12)
    args = ap.parse_args()

    g = builtin("so3")
    h = build_homotopy(g, args.trunc_order, diagnose=(2,))
    pi = linear_poisson(g, args.trunc_order)
    p = derivative_orders(g.dim)[2]
    for seed in range(args.seeds):
        best = None
        for mag in np.geomspace(args.lo, args.hi, args.points):
            cfg = ExperimentConfig(seed=seed, magnitude=float(mag), trunc_order=args.trunc_order)
            pi_tilde = generate_perturbation(cfg, g, h)
            norm = tube_norm(pi_tilde - pi, p, RunConfig().R)
            result = outcome(pi, pi_tilde, h, g, args.max_steps)
            print(f"seed={seed} magnitude={mag:.3e} norm_p={norm:.3e} {result}")
            if result.startswith("converged"):
                best = (mag, norm)
        if best is None:
            print(f"seed={seed} no magnitude converged")
        else:
            print(f"seed={seed} largest converging magnitude {best[0]:.3e} with norm_p {best[1]:.3e}")


if __name__ == "__main__":
    main()
