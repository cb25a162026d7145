"""Independent reference computations used to check the library.

Each oracle takes a different route from the code it checks: sympy
coordinate formulas instead of the odd-variable bracket, Lie series instead
of composition, ODE integration instead of formal flows, and dense grids
instead of the shell sampler.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
import sympy as sp
from scipy.integrate import solve_ivp

from poisson_rigidity.jets import PolyMultivector, schouten_bracket


def symbols(dim):
    return sp.symbols(f"x0:{dim}")


def to_sympy(W: PolyMultivector) -> dict:
    """{index tuple: sympy polynomial expression} for every index set."""
    xs = symbols(W.dim)
    out = {}
    for (indices, exps), value in W.terms().items():
        mono = sp.Mul(*[x ** e for x, e in zip(xs, exps)])
        c = sp.Rational(value.numerator, value.denominator) if W.rational else sp.Float(float(value), 30)
        out[indices] = out.get(indices, 0) + c * mono
    return out


def from_sympy(exprs: dict, dim: int, q: int, trunc_order: int, rational=False) -> PolyMultivector:
    xs = symbols(dim)
    terms = {}
    for indices, expr in exprs.items():
        poly = sp.Poly(sp.expand(expr), *xs)
        for monom, coeff in poly.terms():
            if sum(monom) <= trunc_order:
                terms[(tuple(indices), tuple(monom))] = sp.Rational(coeff) if rational else float(coeff)
    if rational:
        from fractions import Fraction
        terms = {k: Fraction(int(v.p), int(v.q)) for k, v in terms.items()}
    return PolyMultivector.from_terms(dim, q, terms, trunc_order, rational)


def _component(exprs, i):
    return exprs.get((i,), 0)


def _bivector_entry(exprs, i, j):
    if i == j:
        return 0
    return exprs.get((i, j), 0) if i < j else -exprs.get((j, i), 0)


def lie_bracket_vector_fields(X: PolyMultivector, Y: PolyMultivector) -> PolyMultivector:
    """[X, Y]^i = X(Y^i) - Y(X^i)."""
    xs = symbols(X.dim)
    ex, ey = to_sympy(X), to_sympy(Y)
    out = {}
    for i in range(X.dim):
        val = sum(_component(ex, k) * sp.diff(_component(ey, i), xs[k]) - _component(ey, k) * sp.diff(_component(ex, i), xs[k])
                  for k in range(X.dim))
        out[(i,)] = val
    return from_sympy(out, X.dim, 1, X.trunc_order)


def lie_derivative_bivector(X: PolyMultivector, P: PolyMultivector) -> PolyMultivector:
    """(L_X P)^{ij} = X(P^{ij}) - P^{kj} d_k X^i - P^{ik} d_k X^j."""
    xs = symbols(X.dim)
    ex, ep = to_sympy(X), to_sympy(P)
    out = {}
    for i, j in itertools.combinations(range(X.dim), 2):
        val = sum(_component(ex, k) * sp.diff(_bivector_entry(ep, i, j), xs[k]) for k in range(X.dim))
        val -= sum(_bivector_entry(ep, k, j) * sp.diff(_component(ex, i), xs[k]) for k in range(X.dim))
        val -= sum(_bivector_entry(ep, i, k) * sp.diff(_component(ex, j), xs[k]) for k in range(X.dim))
        out[(i, j)] = val
    return from_sympy(out, X.dim, 2, X.trunc_order)


def jacobiator(P: PolyMultivector) -> dict:
    """J^{ijk} = sum_l P^{il} d_l P^{jk} + cyclic, the brute-force Jacobi expression."""
    xs = symbols(P.dim)
    ep = to_sympy(P)
    out = {}
    for i, j, k in itertools.combinations(range(P.dim), 3):
        val = 0
        for a, b, c in ((i, j, k), (j, k, i), (k, i, j)):
            val += sum(_bivector_entry(ep, a, l) * sp.diff(_bivector_entry(ep, b, c), xs[l]) for l in range(P.dim))
        out[(i, j, k)] = sp.expand(val)
    return out


def lie_series_pullback(X: PolyMultivector, W: PolyMultivector) -> PolyMultivector:
    """sum_n ad_X^n W / n!, the pullback by the time-one flow written as a Lie series."""
    total, term, n = W, W, 0
    while not term.is_zero():
        n += 1
        term = schouten_bracket(X, term) / n
        total = total + term
        if n > W.trunc_order + 2:
            break
    return total


def flow_by_ode(X: PolyMultivector, x0: np.ndarray) -> np.ndarray:
    """Time-one flow of X from x0 by adaptive Runge-Kutta."""
    xs = symbols(X.dim)
    ex = to_sympy(X)
    f = sp.lambdify(xs, [_component(ex, i) for i in range(X.dim)], "numpy")
    sol = solve_ivp(lambda t, y: np.array(f(*y), dtype=float), (0.0, 1.0), x0, rtol=1e-12, atol=1e-14)
    return sol.y[:, -1]


def eval_map(maps: np.ndarray, basis, x: np.ndarray) -> np.ndarray:
    mono = np.prod(x[None, :] ** basis.exponents, axis=1)
    return np.asarray(maps, dtype=float) @ mono


def dense_grid_norm(W: PolyMultivector, n: int, r: float, points_per_axis: int = 41) -> float:
    """Sup of all derivatives of order <= n over a Cartesian grid in the ball, via sympy differentiation."""
    xs = symbols(W.dim)
    axis = np.linspace(-r, r, points_per_axis)
    grid = np.stack(np.meshgrid(*([axis] * W.dim), indexing="ij"), axis=-1).reshape(-1, W.dim)
    grid = grid[np.linalg.norm(grid, axis=1) <= r * (1 + 1e-12)]
    best = 0.0
    for expr in to_sympy(W).values():
        for order in range(n + 1):
            for alpha in itertools.combinations_with_replacement(range(W.dim), order):
                der = sp.diff(expr, *[xs[a] for a in alpha]) if alpha else expr
                f = sp.lambdify(xs, der, "numpy")
                vals = np.broadcast_to(np.asarray(f(*grid.T), dtype=float), (len(grid),))
                best = max(best, float(np.max(np.abs(vals))))
    return best


def markov_bound(degree: int, order: int) -> float:
    """Markov's inequality on the unit ball: a degree-D polynomial's k-th derivatives are at most D^(2k) times its sup."""
    return float(degree) ** (2 * order) if degree else (1.0 if order == 0 else 0.0)


def kernel_dimension(matrix: np.ndarray) -> int:
    from scipy.linalg import null_space

    if matrix.shape[1] == 0:
        return 0
    if matrix.shape[0] == 0:
        return matrix.shape[1]
    return null_space(matrix, rcond=1e-10).shape[1]


def lambda2_dimension(vectors: np.ndarray) -> int:
    """Rank of {v_a ^ v_b} built explicitly as antisymmetric matrices."""
    m = vectors.shape[1]
    if m < 2:
        return 0
    wedges = [np.outer(vectors[:, a], vectors[:, b]) - np.outer(vectors[:, b], vectors[:, a])
              for a, b in itertools.combinations(range(m), 2)]
    stack = np.array([w.ravel() for w in wedges])
    return int(np.linalg.matrix_rank(stack, tol=1e-9))


def h2_dimension_oracle(var: np.ndarray, wedge: np.ndarray) -> int:
    """dim coker(var) + dim ker(wedge) + dim Lambda^2(ker var), each from explicit bases."""
    from scipy.linalg import null_space

    b2, n = var.shape
    coker = b2 - (n - kernel_dimension(var))
    ker_var = null_space(var, rcond=1e-10) if b2 else np.eye(n)
    return coker + kernel_dimension(wedge) + lambda2_dimension(ker_var)


def filtration_oracle(pi, Z, h):
    """Z_{k+1} = sum ad_X^n(U)/n! + sum_{n>=1} ad_X^n([pi,X])(1/n! - 1/(n+1)!), with U = -h2[Z,Z]/2."""
    X = h.h1(Z)
    U = h.h2(schouten_bracket(Z, Z)) * -0.5
    out = lie_series_pullback(X, U)
    term = schouten_bracket(pi, X)
    for n in range(1, Z.trunc_order + 2):
        term = schouten_bracket(X, term)
        if term.is_zero():
            break
        out = out + term * (1 / math.factorial(n) - 1 / math.factorial(n + 1))
    return out
