"""Newton-type linearization of a Poisson bivector near a fixed point.

Each step solves the linearized equation with the homotopy operator h1,
optionally smooths the correction, and pulls the current structure back by
the time-one flow of the correction.  The radii and smoothing parameters
follow the super-exponential schedule t -> t^(3/2).
"""

from __future__ import annotations

import csv
import io
import json
import math
from fractions import Fraction
from dataclasses import dataclass, field, replace

import numpy as np

from .cohomology import HomotopyOperators, build_homotopy
from .errors import (
    ConfigError,
    DivergenceError,
    MonitorViolation,
    NotPoissonError,
    PerturbationTooLarge,
    PreconditionError,
)
from .jets import (
    FormalDiffeo,
    PolyMultivector,
    compose,
    jacobi_defect,
    lie_series_flow,
    pullback,
)
from .lie import LieAlgebraSpec, compact_center_check, isotropy_at_origin, linear_poisson
from .norms import DEFAULT_NORM, NormConfig, SmoothingConfig, diffeo_distance, smoothing_apply, smoothing_apply_first_order, tube_norm

FLOAT_CONVERGENCE_TOL = 1e-12
POISSON_TOL = 1e-10
DIVERGENCE_WINDOW = 3


@dataclass(frozen=True)
class Schedule:
    dim: int
    s: int
    alpha: int
    p: int
    R: float
    r: float
    eps0: float
    t0: float

    def radius(self, k: int) -> float:
        """r_k with r_0 = R, r_{k+1} = r_k - eps_k and eps_{k+1} = eps_k^(3/2)."""
        rk, eps = self.R, self.eps0
        for _ in range(k):
            rk -= eps
            eps = eps ** 1.5
        return rk

    def radii(self, steps: int) -> list[float]:
        out, rk, eps = [], self.R, self.eps0
        for _ in range(steps + 1):
            out.append(rk)
            rk -= eps
            eps = eps ** 1.5
        return out

    def t(self, k: int) -> float:
        return self.t0 ** (1.5 ** k)

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in ("dim", "s", "alpha", "p", "R", "r", "eps0", "t0")}


def derivative_orders(d: int) -> tuple[int, int, int]:
    """(s, alpha, p) for a d-dimensional ambient space."""
    s = d // 2 + 1
    return s, 2 * (s + 5), 7 * (s + 4)


def schedule_init(d: int, norm_of_Z0: float, R: float, r: float) -> Schedule:
    if not 0 < r < R < 1:
        raise ConfigError(f"radii must satisfy 0 < r < R < 1, got R={R}, r={r}")
    if not norm_of_Z0 > 0:
        raise PreconditionError("schedule needs a nonzero perturbation")
    s, alpha, p = derivative_orders(d)
    t0 = norm_of_Z0 ** (-1.0 / alpha)
    if t0 <= 1:
        raise PerturbationTooLarge(
            f"||Z_0||_(p={p}, R={R}) = {norm_of_Z0:.3e} >= 1 gives t_0 = {t0:.4f} <= 1; "
            f"the perturbation must lie below the smallness threshold delta (r (R - r))^d "
            f"= delta * {(r * (R - r)) ** d:.3e} for some delta > 0"
        )
    return Schedule(d, s, alpha, p, R, r, (R - r) / 4, t0)


@dataclass(frozen=True)
class RunConfig:
    smoothing: SmoothingConfig = SmoothingConfig()
    mode: str = "p1"
    R: float = 0.9
    r: float = 0.5
    max_steps: int = 32
    tolerance: float = FLOAT_CONVERGENCE_TOL
    poisson_tol: float = POISSON_TOL
    norm: NormConfig = DEFAULT_NORM
    enforce_monitors: bool = True

    def __post_init__(self):
        if self.mode not in ("p0", "p1"):
            raise ConfigError(f"mode must be p0 or p1, got {self.mode!r}")
        if not 0 < self.r < self.R < 1:
            raise ConfigError(f"radii must satisfy 0 < r < R < 1, got R={self.R}, r={self.r}")
        if self.max_steps < 0:
            raise ConfigError("max_steps must be nonnegative")


@dataclass(frozen=True)
class IterationState:
    k: int
    pi: PolyMultivector
    pi_k: PolyMultivector
    X_k: PolyMultivector | None
    psi_k: FormalDiffeo
    history: tuple = ()

    @property
    def Z_k(self) -> PolyMultivector:
        return self.pi_k - self.pi


def _is_zero(W: PolyMultivector, tol: float) -> bool:
    return W.is_zero() if W.rational else W.max_abs() <= tol


def _defect_size(pi: PolyMultivector) -> float:
    return float(jacobi_defect(pi))


def monitor(state: IterationState, schedule: Schedule, norm0_p: float, cfg: NormConfig = DEFAULT_NORM) -> dict:
    """Inductive bounds a_k, b_k at radius r_k and the continuity ratio of psi_k."""
    rk, tk = schedule.radius(state.k), schedule.t(state.k)
    Z = state.Z_k.as_float()
    norm_s = tube_norm(Z, schedule.s, rk, cfg)
    norm_p = tube_norm(Z, schedule.p, rk, cfg)
    drift = diffeo_distance(state.psi_k, 1, schedule.r, cfg)
    return {
        "r_k": rk,
        "t_k": tk,
        "norm_s": norm_s,
        "norm_p": norm_p,
        # at k = 0, t_0^-alpha is ||Z_0||_{p,R} itself; compare against that to avoid a rounding trip
        "a_k": norm_s <= (norm0_p if state.k == 0 else tk ** -schedule.alpha),
        "b_k": norm_p <= (norm0_p ** -1 if state.k == 0 else tk ** schedule.alpha),
        "continuity": drift / norm0_p ** (1.0 / schedule.alpha) if norm0_p > 0 else 0.0,
    }


def step(state: IterationState, h: HomotopyOperators, smoothing: SmoothingConfig, schedule: Schedule | None,
         mode: str = "p1", poisson_tol: float = POISSON_TOL) -> IterationState:
    """One linearization step: X = S(h1(Z)), pi <- flow(X)^* pi, psi <- psi o flow(X)."""
    Z = state.Z_k
    if Z.is_zero():
        return replace(state, k=state.k + 1, X_k=Z.zero(Z.dim, 1, Z.trunc_order, Z.rational))
    X = h.h1(Z)
    if smoothing.mode != "none":
        if mode == "p1" and not smoothing.first_jet_preserving:
            smoothing = replace(smoothing, first_jet_preserving=True)
        t = schedule.t(state.k) if schedule is not None else math.inf
        X = smoothing_apply_first_order(X, t, smoothing) if mode == "p1" else smoothing_apply(X, t, smoothing)
    assert X.lowest_degree() >= 2, "correction lost its vanishing first jet"
    phi = lie_series_flow(X)
    pi_next = pullback(phi, state.pi_k)
    defect = _defect_size(pi_next)
    if defect > poisson_tol:
        raise NotPoissonError(f"step {state.k + 1}: Jacobi defect {defect:.3e} exceeds {poisson_tol:g}")
    return IterationState(state.k + 1, state.pi, pi_next, X, compose(state.psi_k, phi), state.history)


@dataclass
class RunResult:
    converged: bool
    steps: int
    psi: FormalDiffeo
    final_defect: float
    history: list
    schedule: Schedule | None = None
    lowest_degrees: list = field(default_factory=list)
    final_pi: PolyMultivector | None = None

    def to_json(self) -> dict:
        return {
            "converged": self.converged,
            "steps": self.steps,
            "final_defect": self.final_defect,
            "schedule": None if self.schedule is None else self.schedule.to_json(),
            "history": self.history,
            "psi": {"maps": [c.to_json() for c in self.psi.components]},
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


HISTORY_COLUMNS = ("k", "r_k", "t_k", "norm_s", "norm_p", "lowest_degree", "a_k", "b_k", "jacobi_defect")


def history_csv(history) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(HISTORY_COLUMNS)
    for rec in history:
        writer.writerow([rec["k"]] + [_fmt(rec[c]) for c in HISTORY_COLUMNS[1:]])
    return buf.getvalue()


def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, int):
        return str(value)
    if value is None:
        return ""
    return f"{value:.12e}"


def validate_inputs(pi: PolyMultivector, pi_tilde: PolyMultivector, poisson_tol: float = POISSON_TOL) -> LieAlgebraSpec:
    """Check the linear model, the matching first jet, and that pi_tilde is Poisson; return the isotropy algebra."""
    if pi.q != 2 or pi_tilde.q != 2:
        raise PreconditionError("both structures must be bivectors")
    if pi.dim != pi_tilde.dim or pi.trunc_order != pi_tilde.trunc_order:
        raise PreconditionError("structures live in different jet spaces")
    if not (pi - pi.linear_part()).is_zero() or np.any(pi.coeffs[:, 0] != 0):
        raise PreconditionError("the model structure must be linear")
    jet_gap = (pi_tilde.truncated(1) - pi).max_abs()
    if jet_gap > (0 if pi_tilde.rational else FLOAT_CONVERGENCE_TOL):
        raise PreconditionError("the perturbation must share the first jet of the linear model")
    defect = _defect_size(pi_tilde)
    if defect > poisson_tol:
        raise NotPoissonError(f"input is not Poisson: Jacobi defect {defect:.3e} exceeds {poisson_tol:g}")
    return isotropy_at_origin(pi)


def run(pi: PolyMultivector, pi_tilde: PolyMultivector, config: RunConfig = RunConfig(),
        h: HomotopyOperators | None = None, g: LieAlgebraSpec | None = None) -> RunResult:
    """Iterate until pi_k equals the linear model in the jet ring or max_steps is reached."""
    iso = validate_inputs(pi, pi_tilde, config.poisson_tol)
    rational = pi_tilde.rational
    psi0 = FormalDiffeo.identity(pi.dim, pi.trunc_order, rational)
    state = IterationState(0, pi, pi_tilde, None, psi0)
    tol = config.tolerance

    def record(st, mon):
        rec = {"k": st.k, "lowest_degree": st.Z_k.lowest_degree(0 if rational else tol), "jacobi_defect": _defect_size(st.pi_k)}
        rec.update(mon)
        return rec

    if _is_zero(state.Z_k, tol):
        empty = {"r_k": config.R, "t_k": None, "norm_s": 0.0, "norm_p": 0.0, "a_k": True, "b_k": True, "continuity": 0.0}
        hist = [record(state, empty)]
        return RunResult(True, 0, psi0, 0.0, hist, None, [hist[0]["lowest_degree"]], pi_tilde)

    d = pi.dim
    s, alpha, p = derivative_orders(d)
    norm0_p = tube_norm(state.Z_k.as_float(), p, config.R, config.norm)
    schedule = schedule_init(d, norm0_p, config.R, config.r)
    if h is None:
        algebra = g if g is not None else iso
        if g is None and algebra.inner_product is None:
            report = compact_center_check(algebra)
            if not report.is_compact_type:
                raise PreconditionError("isotropy algebra is not of compact type; supply homotopy operators")
        h = build_homotopy(algebra, pi.trunc_order, rational=rational, diagnose=(2,))

    history = []
    converged = False
    while True:
        mon = monitor(state, schedule, norm0_p, config.norm)
        history.append(record(state, mon))
        state = replace(state, history=tuple(history))
        _check_monitors(history, config.enforce_monitors)
        if _is_zero(state.Z_k, tol):
            converged = True
            break
        if state.k >= config.max_steps:
            break
        state = step(state, h, config.smoothing, schedule, config.mode, config.poisson_tol)

    psi = state.psi_k
    final = pullback(psi, pi_tilde) - pi
    final_defect = float(final.max_abs())
    return RunResult(converged, state.k, psi, final_defect, history, schedule,
                     [rec["lowest_degree"] for rec in history], state.pi_k)


def _check_monitors(history: list, enforce: bool):
    last = history[-1]
    if last["k"] == 0 and not last["a_k"]:
        raise MonitorViolation("a_0 failed although it holds by construction", history)
    window = [rec["norm_s"] for rec in history[-(DIVERGENCE_WINDOW + 1):]]
    if len(window) == DIVERGENCE_WINDOW + 1 and all(b > a for a, b in zip(window, window[1:])):
        raise DivergenceError(f"||Z_k||_s grew for {DIVERGENCE_WINDOW} consecutive steps", history)
    if enforce and last["k"] >= 2:
        prev = history[-2]["norm_s"]
        if last["norm_s"] > prev * (1 + 1e-9) + 1e-15:
            raise MonitorViolation(
                f"||Z_k||_(s, r_k) increased from {prev:.6e} at k={last['k'] - 1} to {last['norm_s']:.6e} at k={last['k']}",
                history,
            )


def nondegeneracy_transport(psi: FormalDiffeo, t) -> FormalDiffeo:
    """mu_t o psi o mu_(1/t): carries a linearization of t mu_t^* pi to one of pi."""
    if not t > 0:
        raise PreconditionError("transport parameter must be positive")
    if np.any(psi.maps[:, 0] != 0):
        raise PreconditionError("map must fix the origin")
    rational = psi.rational
    tt = Fraction(t) if rational else float(t)
    mu = FormalDiffeo.scaling(tt, psi.dim, psi.trunc_order, rational)
    mu_inv = FormalDiffeo.scaling(1 / tt, psi.dim, psi.trunc_order, rational)
    out = compose(mu, compose(psi, mu_inv))
    return FormalDiffeo(out.dim, out.trunc_order, out.maps, psi.kind)


def linearize(g: LieAlgebraSpec, pi_tilde: PolyMultivector, config: RunConfig = RunConfig()) -> RunResult:
    """Run against the linear model of g, building homotopy operators from g's inner product."""
    pi = linear_poisson(g, pi_tilde.trunc_order, pi_tilde.rational)
    return run(pi, pi_tilde, config, g=g)
