"""Experiment plumbing: configs, random Poisson perturbations, and runs that write artifacts."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .cohomology import HomotopyOperators, build_homotopy
from .errors import ConfigError, GenerationError, HarmonicObstruction, InputError
from .jets import DEFAULT_ORDER, PolyMultivector, jacobi_defect, lie_series_flow, pullback, random_multivector, schouten_bracket
from .lie import LieAlgebraSpec, builtin, linear_poisson
from .nashmoser import RunConfig, RunResult, history_csv, run
from .norms import SmoothingConfig, tube_norm

NEWTON_TOL = 1e-12
NEWTON_MAX_ITER = 50
VERIFY_RADIUS = 0.5
VERIFY_TOL = 1e-10


@dataclass(frozen=True)
class ExperimentConfig:
    algebra: str = "so3"
    perturbation: str | None = None
    kind: str = "exact"
    min_degree: int = 2
    magnitude: float = 1e-3
    seed: int = 0
    trunc_order: int = DEFAULT_ORDER
    mode: str = "p1"
    smoothing: str = "none"
    R: float = 0.9
    r: float = 0.5
    out: str | None = None
    rational: bool = False
    max_steps: int = 32

    def __post_init__(self):
        if self.kind not in ("exact", "random_poisson_deformation"):
            raise ConfigError(f"unknown perturbation kind {self.kind!r}")
        if self.min_degree < 2:
            raise ConfigError("min_degree must be at least 2 so the first jet is preserved")
        if not self.magnitude > 0:
            raise ConfigError("magnitude must be positive")
        if not 0 < self.r < self.R < 1:
            raise ConfigError(f"radii must satisfy 0 < r < R < 1, got R={self.R}, r={self.r}")
        if self.trunc_order < self.min_degree:
            raise ConfigError("trunc_order is below min_degree")
        if self.rational and self.kind == "random_poisson_deformation" and self.perturbation is None:
            raise ConfigError("random_poisson_deformation is float-only; its Newton projection is not exact")

    def run_config(self) -> RunConfig:
        return RunConfig(smoothing=SmoothingConfig(self.smoothing), mode=self.mode, R=self.R, r=self.r,
                         max_steps=self.max_steps)


def load_algebra(name_or_path: str) -> LieAlgebraSpec:
    path = Path(name_or_path)
    if path.suffix == ".json" or path.exists():
        try:
            return LieAlgebraSpec.load(path)
        except FileNotFoundError as exc:
            raise InputError(f"algebra file {path} not found") from exc
    return builtin(name_or_path)


def _quantize(W: PolyMultivector, magnitude: float) -> PolyMultivector:
    """Exact copy of W with coefficients rounded to multiples of magnitude / 1000."""
    step = Fraction(str(magnitude)) / 1000
    arr = np.empty(W.coeffs.shape, dtype=object)
    arr.ravel()[:] = [int(round(v * 1000 / magnitude)) * step for v in W.coeffs.ravel()]
    return PolyMultivector(W.dim, W.q, W.trunc_order, arr)


def _random_field(cfg: ExperimentConfig, dim: int, q: int, rng) -> PolyMultivector:
    W = random_multivector(dim, q, cfg.trunc_order, min_degree=cfg.min_degree,
                           max_degree=min(cfg.min_degree + 1, cfg.trunc_order), rng=rng)
    W = W * (cfg.magnitude / W.max_abs()) if not W.is_zero() else W
    return _quantize(W, cfg.magnitude) if cfg.rational else W


def require_acyclic(h: HomotopyOperators, degrees) -> None:
    """Raise if any bivector slice in ``degrees`` has harmonic elements."""
    bad = [k for k in degrees if h.harmonic_dims.get((2, k), 0) > 0]
    if bad:
        raise HarmonicObstruction(
            f"bivector slices k={bad} carry harmonic elements (first: dimension {h.harmonic_dims[(2, bad[0])]}); "
            "the linear model is not rigid in this range"
        )


def poisson_projection(pi: PolyMultivector, P: PolyMultivector, h: HomotopyOperators,
                       tol: float = NEWTON_TOL, max_iter: int = NEWTON_MAX_ITER) -> PolyMultivector:
    """Newton iteration P <- P - h2([P, P]) / 2 until [P, P] vanishes to ``tol``."""
    for _ in range(max_iter + 1):
        defect = schouten_bracket(P, P)
        if defect.max_abs() <= tol:
            return P
        P = P - h.h2(defect) * 0.5
    raise GenerationError(f"Jacobi defect {float(schouten_bracket(P, P).max_abs()):.3e} after {max_iter} Newton corrections")


def generate_perturbation(cfg: ExperimentConfig, g: LieAlgebraSpec | None = None,
                          h: HomotopyOperators | None = None) -> PolyMultivector:
    g = load_algebra(cfg.algebra) if g is None else g
    pi = linear_poisson(g, cfg.trunc_order, cfg.rational)
    rng = np.random.default_rng(cfg.seed)
    if cfg.kind == "exact":
        X = _random_field(cfg, g.dim, 1, rng)
        return pullback(lie_series_flow(X), pi)
    if h is None:
        h = build_homotopy(g, cfg.trunc_order, diagnose=(2,))
    V = _random_field(cfg, g.dim, 2, rng)
    V = V - h.h2(schouten_bracket(pi, V))  # now [pi, V] = 0
    return poisson_projection(pi, pi + V, h)


def load_perturbation(path: str, cfg: ExperimentConfig) -> PolyMultivector:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise InputError(f"perturbation file {path} not found") from exc
    W = PolyMultivector.from_json(data, rational=cfg.rational or None)
    if W.trunc_order != cfg.trunc_order:
        W = W.with_order(cfg.trunc_order)
    return W.as_rational() if cfg.rational else W


def verify(result: RunResult, pi: PolyMultivector, pi_tilde: PolyMultivector) -> dict:
    """Post-run checks: psi is a Poisson map onto the model and is the identity to first order."""
    residual = (pullback(result.psi, pi_tilde) - pi).as_float()
    maps = result.psi.maps
    ident = np.zeros_like(maps)
    for i in range(result.psi.dim):
        ident[i, 1 + i] = 1
    first_jet = maps[:, : 1 + result.psi.dim]
    identity_first_order = bool(np.all(first_jet == ident[:, : 1 + result.psi.dim]))
    residual_norm = tube_norm(residual, 0, VERIFY_RADIUS)
    return {
        "residual_sup_norm": residual_norm,
        "poisson_map": residual_norm <= VERIFY_TOL,
        "identity_to_first_order": identity_first_order,
    }


def summary_line(summary: dict) -> str:
    return (f"converged={str(summary['converged']).lower()} steps={summary['steps']} "
            f"final_defect={summary['final_defect']:.3e} continuity={summary['continuity']:.6e}")


def run_experiment(cfg: ExperimentConfig) -> tuple[int, dict]:
    """Run one linearization and write history.csv, result.json and summary.json under cfg.out."""
    g = load_algebra(cfg.algebra)
    h = build_homotopy(g, cfg.trunc_order, rational=cfg.rational, diagnose=(2,))
    require_acyclic(h, range(2, cfg.trunc_order + 1))
    pi = linear_poisson(g, cfg.trunc_order, cfg.rational)
    if cfg.perturbation is not None:
        pi_tilde = load_perturbation(cfg.perturbation, cfg)
    else:
        pi_tilde = generate_perturbation(cfg, g, None if cfg.rational else h)
    result = run(pi, pi_tilde, cfg.run_config(), h=h, g=g)
    checks = verify(result, pi, pi_tilde)
    summary = {
        "converged": result.converged,
        "steps": result.steps,
        "final_defect": float(result.final_defect),
        "continuity": float(result.history[-1]["continuity"]),
        "input_jacobi_defect": float(jacobi_defect(pi_tilde)),
        "checks": checks,
        "config": {k: v for k, v in asdict(cfg).items() if k != "out"},
    }
    ok = result.converged and checks["poisson_map"] and checks["identity_to_first_order"]
    if cfg.out is not None:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "history.csv").write_text(history_csv(result.history))
        (out / "result.json").write_text(result.dumps() + "\n")
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return (0 if ok else 1), summary
