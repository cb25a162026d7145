"""C^n sup norms on balls, degree-truncation smoothing, and empirical tame-estimate constants.

Sup norms are sampled.  The sample set of the ball of radius r is a fixed
point cloud intersected with that ball, so shrinking r only removes points
and the sampled norm is exactly monotone in r.  The cloud consists of
concentric shells at radii j / shells, each carrying the coordinate axis
points and a chunk of a scrambled Sobol sequence pushed to the sphere.
"""

from __future__ import annotations

import csv
import functools
import io
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

from .errors import ConfigError, PreconditionError
from .jets import (
    FormalDiffeo,
    PolyMultivector,
    lie_series_flow,
    monomial_basis,
    pullback,
    random_multivector,
    schouten_bracket,
)

_RADIUS_SLACK = 1e-12


@dataclass(frozen=True)
class NormConfig:
    """Sampling policy for sup norms.

    With ``grid_points_per_axis`` set, the cloud is a Cartesian grid of the
    unit cube cut to the unit ball; otherwise about ``points`` low-discrepancy
    directions spread over ``shells`` concentric spheres.
    """

    points: int = 4096
    shells: int = 80
    grid_points_per_axis: int | None = None
    seed: int = 7

    def __post_init__(self):
        if self.grid_points_per_axis is None and (self.points < 1 or self.shells < 1):
            raise ConfigError("need at least one sample point and one shell")
        if self.grid_points_per_axis is not None and self.grid_points_per_axis < 1:
            raise ConfigError("grid_points_per_axis must be positive")


DEFAULT_NORM = NormConfig()


@functools.lru_cache(maxsize=32)
def _unit_cloud(dim: int, cfg: NormConfig) -> np.ndarray:
    if cfg.grid_points_per_axis is not None:
        axis = np.linspace(-1.0, 1.0, cfg.grid_points_per_axis)
        grid = np.stack(np.meshgrid(*([axis] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
        return grid[np.linalg.norm(grid, axis=1) <= 1.0 + _RADIUS_SLACK]
    per_shell = math.ceil(cfg.points / cfg.shells)
    sobol = qmc.Sobol(dim, scramble=True, seed=cfg.seed)
    raw = sobol.random_base2(math.ceil(math.log2(per_shell * cfg.shells)))[: per_shell * cfg.shells]
    gauss = ndtri(np.clip(raw, 1e-12, 1 - 1e-12))
    dirs = gauss / np.linalg.norm(gauss, axis=1, keepdims=True)
    axes = np.vstack([np.eye(dim), -np.eye(dim)])
    shells = [np.zeros((1, dim))]
    for j in range(1, cfg.shells + 1):
        rho = j / cfg.shells
        chunk = dirs[(j - 1) * per_shell: j * per_shell]
        shells.append(rho * np.vstack([axes, chunk]))
    return np.vstack(shells)


def sample_points(dim: int, r: float, cfg: NormConfig = DEFAULT_NORM) -> np.ndarray:
    if not 0 < r <= 1:
        raise ConfigError(f"radius {r} not in (0, 1]")
    cloud = _unit_cloud(dim, cfg)
    pts = cloud[np.linalg.norm(cloud, axis=1) <= r + _RADIUS_SLACK]
    if len(pts) == 0:
        raise ConfigError(f"no sample points in the ball of radius {r}")
    return pts


@functools.lru_cache(maxsize=64)
def _derivative_pairs(dim: int, order: int, n: int):
    """Index triples (alpha, gamma, beta = alpha + gamma) with factor beta!/gamma!, |alpha| <= n."""
    basis = monomial_basis(dim, order)
    exps = basis.exponents
    a_idx, g_idx, b_idx, fac = [], [], [], []
    top = int(basis.offsets[min(n, order) + 1])
    for a in range(top):
        room = order - basis.degrees[a]
        gam = np.arange(int(basis.offsets[room + 1]))
        beta = basis.index_of(exps[a][None, :] + exps[gam])
        a_idx.append(np.full(len(gam), a))
        g_idx.append(gam)
        b_idx.append(beta)
        fac.append(basis.factorials[beta] / basis.factorials[gam])
    return tuple(np.concatenate(x) for x in (a_idx, g_idx, b_idx, fac))


@functools.lru_cache(maxsize=16)
def _cloud_monomials(dim: int, order: int, cfg: NormConfig) -> np.ndarray:
    cloud = _unit_cloud(dim, cfg)
    powers = np.cumprod(np.concatenate([np.ones((len(cloud), dim, 1)),
                                        np.repeat(cloud[:, :, None], order, axis=2)], axis=2), axis=2)
    exps = monomial_basis(dim, order).exponents
    values = np.ones((len(cloud), len(exps)))
    for i in range(dim):
        values *= powers[:, i, exps[:, i]]
    return values.T  # (M, P)


def _monomial_values(dim: int, order: int, r: float, cfg: NormConfig) -> np.ndarray:
    inside = np.linalg.norm(_unit_cloud(dim, cfg), axis=1) <= r + _RADIUS_SLACK
    return _cloud_monomials(dim, order, cfg)[:, inside]


def sup_norm_rows(coeffs: np.ndarray, dim: int, order: int, n: int, r: float,
                  cfg: NormConfig = DEFAULT_NORM) -> float:
    """max over rows, |alpha| <= n and sample points of |d^alpha row|."""
    if n < 0:
        raise PreconditionError("derivative order must be nonnegative")
    sample_points(dim, r, cfg)
    arr = np.asarray(coeffs, dtype=float)
    if not np.any(arr):
        return 0.0
    basis = monomial_basis(dim, order)
    nz = np.any(arr != 0, axis=0)
    maxdeg = int(basis.degrees[np.nonzero(nz)[0].max()])
    top_alpha = int(basis.offsets[min(n, maxdeg) + 1])
    top_gamma = int(basis.offsets[maxdeg + 1])
    a_idx, g_idx, b_idx, fac = _derivative_pairs(dim, order, min(n, order))
    keep = (a_idx < top_alpha) & (g_idx < top_gamma)
    a_idx, g_idx, b_idx, fac = a_idx[keep], g_idx[keep], b_idx[keep], fac[keep]
    values = _monomial_values(dim, order, float(r), cfg)[:top_gamma]
    best = 0.0
    for row in arr:
        if not np.any(row):
            continue
        dmat = np.zeros((top_alpha, top_gamma))
        np.add.at(dmat, (a_idx, g_idx), row[b_idx] * fac)
        best = max(best, float(np.max(np.abs(dmat @ values))))
    return best


def tube_norm(W: PolyMultivector, n: int, r: float, cfg: NormConfig = DEFAULT_NORM) -> float:
    """Sampled ||W||_{n,r}: largest derivative of order <= n of any component on the ball."""
    return sup_norm_rows(W.coeffs, W.dim, W.trunc_order, n, r, cfg)


def diffeo_distance(phi: FormalDiffeo, n: int, r: float, cfg: NormConfig = DEFAULT_NORM) -> float:
    """C^n distance of phi from the identity on the ball of radius r."""
    ident = FormalDiffeo.identity(phi.dim, phi.trunc_order, phi.rational)
    return sup_norm_rows(phi.maps - ident.maps, phi.dim, phi.trunc_order, n, r, cfg)


# smoothing ------------------------------------------------------------------

def floor_threshold(t: float) -> int:
    return int(math.floor(t))


@dataclass(frozen=True)
class SmoothingConfig:
    mode: str = "none"
    threshold: Callable[[float], int] = floor_threshold
    first_jet_preserving: bool = False

    def __post_init__(self):
        if self.mode not in ("none", "degree_truncation"):
            raise ConfigError(f"unknown smoothing mode {self.mode!r}")

    def cutoff(self, t: float) -> int:
        degree = int(self.threshold(t))
        return max(degree, 2) if self.first_jet_preserving else degree


def smoothing_apply(W: PolyMultivector, t: float, cfg: SmoothingConfig) -> PolyMultivector:
    if not t > 1:
        raise PreconditionError(f"smoothing parameter t={t} must exceed 1")
    if cfg.mode == "none":
        return W
    return W.truncated(cfg.cutoff(t))


def smoothing_apply_first_order(W: PolyMultivector, t: float, cfg: SmoothingConfig) -> PolyMultivector:
    """Smoothing that keeps the space of fields with vanishing first jet."""
    if W.lowest_degree() < 2:
        raise PreconditionError("first-order smoothing needs a field with vanishing first jet")
    out = smoothing_apply(W, t, cfg)
    low = out.truncated(1)
    assert low.is_zero()
    return out - low


# empirical inequalities -----------------------------------------------------

def interpolation_report(W: PolyMultivector, k: int, l: int, n: int, r: float,
                         cfg: NormConfig = DEFAULT_NORM) -> dict:
    """Both sides of ||W||_l <= C r^(k-l) ||W||_k^((n-l)/(n-k)) ||W||_n^((l-k)/(n-k)) with C stripped."""
    if not (0 <= k <= l <= n) or k == n:
        raise PreconditionError(f"need 0 <= k <= l <= n with k < n, got {(k, l, n)}")
    lhs = tube_norm(W, l, r, cfg)
    norm_k, norm_n = tube_norm(W, k, r, cfg), tube_norm(W, n, r, cfg)
    if norm_k == 0 or norm_n == 0:
        return {"lhs": lhs, "rhs_without_constant": 0.0, "ratio": 0.0}
    rhs = r ** (k - l) * norm_k ** ((n - l) / (n - k)) * norm_n ** ((l - k) / (n - k))
    return {"lhs": lhs, "rhs_without_constant": rhs, "ratio": lhs / rhs}


@dataclass(frozen=True)
class TameSampleSpec:
    """How to draw random instances for the tame-estimate harness.

    Sample i uses the generator seeded with (seed, i), so doubling ``count``
    keeps the first half of the sample unchanged.
    """

    count: int = 200
    dim: int = 3
    trunc_order: int = 6
    max_degree: int = 3
    orders: tuple = (0, 1, 2)
    r: float = 1.0
    inner_ratio: float = 0.8
    theta: float = 0.5
    seed: int = 0
    norm: NormConfig = field(default_factory=lambda: NormConfig(points=1024, shells=32))


TAME_KINDS = ("bracket", "flow", "pullback1", "pullback2", "pullback3")
REPORT_COLUMNS = ("kind", "sample_id", "n", "r", "lhs", "rhs", "ratio")


def _draw(spec: TameSampleSpec, i: int):
    rng = np.random.default_rng([spec.seed, i])
    W = random_multivector(spec.dim, 2, spec.trunc_order, max_degree=spec.max_degree, rng=rng)
    V = random_multivector(spec.dim, 1, spec.trunc_order, max_degree=spec.max_degree, rng=rng)
    X = random_multivector(spec.dim, 1, spec.trunc_order, min_degree=2, max_degree=spec.max_degree, rng=rng)
    X = X * (10.0 ** rng.uniform(-3.0, 0.0) / max(X.max_abs(), 1e-300))
    return W, V, X


def _ratio(lhs: float, rhs: float) -> float:
    if lhs == 0:
        return 0.0
    return lhs / rhs if rhs > 0 else math.inf


def tame_ratio_report(kind: str, spec: TameSampleSpec = TameSampleSpec()) -> dict:
    """Measured ratios lhs / rhs (constants set to 1) for one tame estimate.

    Returns ``{"rows": [...], "skipped": int, "max_ratio": float}``; rows
    carry the CSV columns ``REPORT_COLUMNS``.
    """
    if kind not in TAME_KINDS:
        raise ConfigError(f"unknown estimate kind {kind!r}")
    r, s, cfg = spec.r, spec.r * spec.inner_ratio, spec.norm
    rows, skipped = [], 0
    top = max(spec.orders) + 2

    for i in range(spec.count):
        W, V, X = _draw(spec, i)
        if kind == "bracket":
            br = schouten_bracket(V, W)
            nv = [tube_norm(V, m, r, cfg) for m in range(top)]
            nw = [tube_norm(W, m, r, cfg) for m in range(top)]
            for n in spec.orders:
                lhs = tube_norm(br, n, r, cfg)
                rhs = r ** -(n + 1) * (nv[0] * nw[n + 1] + nv[n + 1] * nw[0])
                rows.append((kind, i, n, r, lhs, rhs, _ratio(lhs, rhs)))
            continue
        nx = [tube_norm(X, m, r, cfg) for m in range(top + 1)]
        if not (nx[0] < (r - s) * spec.theta and nx[1] < spec.theta):
            skipped += 1
            continue
        phi = lie_series_flow(X)
        if kind == "flow":
            for n in spec.orders:
                lhs = diffeo_distance(phi, n, s, cfg)
                rhs = nx[0] if n == 0 else r ** (1 - n) * nx[n]
                rows.append((kind, i, n, s, lhs, rhs, _ratio(lhs, rhs)))
            continue
        nw = [tube_norm(W, m, r, cfg) for m in range(top + 1)]
        pulled = pullback(phi, W)
        for n in spec.orders:
            if kind == "pullback1":
                lhs = tube_norm(pulled, n, s, cfg)
                rhs = r ** -n * (nw[n] + nw[0] * nx[n + 1])
            elif kind == "pullback2":
                lhs = tube_norm(pulled - W, n, s, cfg)
                rhs = r ** (-2 * n - 1) * (nx[n + 1] * nw[1] + nx[1] * nw[n + 1])
            else:
                third = pulled - W - pullback(phi, schouten_bracket(X, W))
                lhs = tube_norm(third, n, s, cfg)
                rhs = r ** (-3 * (n + 2)) * nx[0] * (nx[n + 2] * nw[2] + nx[2] * nw[n + 2])
            rows.append((kind, i, n, s, lhs, rhs, _ratio(lhs, rhs)))
    finite = [row[-1] for row in rows]
    return {"rows": rows, "skipped": skipped, "max_ratio": max(finite, default=0.0)}


def interpolation_sample_report(spec: TameSampleSpec, k: int = 0, l: int = 2, n: int = 4) -> dict:
    """interpolation_report over random bivectors of degree <= spec.max_degree."""
    rows = []
    for i in range(spec.count):
        rng = np.random.default_rng([spec.seed, i])
        W = random_multivector(spec.dim, 2, spec.trunc_order, max_degree=spec.max_degree, rng=rng)
        rep = interpolation_report(W, k, l, n, spec.r, spec.norm)
        rows.append(("interpolation", i, l, spec.r, rep["lhs"], rep["rhs_without_constant"], rep["ratio"]))
    return {"rows": rows, "skipped": 0, "max_ratio": max((row[-1] for row in rows), default=0.0)}


def report_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for row in rows:
        writer.writerow([row[0], row[1], row[2], f"{row[3]:.6g}", f"{row[4]:.12e}", f"{row[5]:.12e}", f"{row[6]:.12e}"])
    return buf.getvalue()


def smoothing_ratio_report(spec: TameSampleSpec, t_values=(2.5, 4.0), m: int = 1,
                           cfg: SmoothingConfig = SmoothingConfig("degree_truncation")) -> dict:
    """Ratios for ||S_t W||_{n+m} <= C t^m ||W||_n and ||S_t W - W||_n <= C t^-m ||W||_{n+m}."""
    rows = []
    for i in range(spec.count):
        W, _, _ = _draw(spec, i)
        for t in t_values:
            smooth = smoothing_apply(W, t, cfg)
            for n in spec.orders:
                growth = _ratio(tube_norm(smooth, n + m, spec.r, spec.norm),
                                t ** m * tube_norm(W, n, spec.r, spec.norm))
                decay = _ratio(tube_norm(smooth - W, n, spec.r, spec.norm),
                               t ** -m * tube_norm(W, n + m, spec.r, spec.norm))
                rows.append({"sample_id": i, "t": t, "n": n, "growth": growth, "decay": decay})
    return {
        "rows": rows,
        "max_growth": max((row["growth"] for row in rows), default=0.0),
        "max_decay": max((row["decay"] for row in rows), default=0.0),
    }
