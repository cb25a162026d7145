"""Truncated polynomial multivector fields on R^d and formal diffeomorphisms.

Coefficients are stored densely: a multivector of degree q is an array of
shape ``(C(d, q), M)`` whose rows follow the increasing index sets
``combinations(range(d), q)`` and whose columns follow a graded monomial
basis of size ``M = C(N + d, d)``.  Products use index tables built once
per pair of degree blocks, so every truncated operation is a handful of
vectorised scatter-adds.

Float arrays drop entries below ``DROP_TOL`` after every operation.  Arrays
of dtype ``object`` holding :class:`fractions.Fraction` give the exact mode.
Indices are 0-based throughout (``x_0 .. x_{d-1}``).
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import sympy

from .errors import (
    InputError,
    PreconditionError,
    StructuralError,
    UnsupportedDegreeError,
)

DROP_TOL = 1e-14
DEFAULT_ORDER = 16

Monomial = tuple


class MonomialBasis:
    """Graded monomial basis of R[x_0..x_{d-1}] up to total degree ``order``."""

    def __init__(self, dim: int, order: int):
        if dim < 1 or order < 0:
            raise StructuralError(f"invalid basis dim={dim} order={order}")
        self.dim = dim
        self.order = order
        rows = []
        for k in range(order + 1):
            for combo in itertools.combinations_with_replacement(range(dim), k):
                e = [0] * dim
                for i in combo:
                    e[i] += 1
                rows.append(e)
        self.exponents = np.array(rows, dtype=np.int64).reshape(-1, dim)
        self.size = len(rows)
        self.degrees = self.exponents.sum(axis=1)
        self.offsets = np.searchsorted(self.degrees, np.arange(order + 2))
        self._radix = (order + 1) ** np.arange(dim, dtype=np.int64)
        keys = self.exponents @ self._radix
        self._perm = np.argsort(keys)
        self._sorted_keys = keys[self._perm]
        self.factorials = np.array(
            [math.prod(math.factorial(int(e)) for e in row) for row in self.exponents],
            dtype=np.float64,
        )
        # parent[b] = index of exponents[b] - e_var[b], used to build powers
        self.var = np.argmax(self.exponents > 0, axis=1)
        self.parent = np.zeros(self.size, dtype=np.int64)
        if self.size > 1:
            shifted = self.exponents[1:].copy()
            shifted[np.arange(self.size - 1), self.var[1:]] -= 1
            self.parent[1:] = self.index_of(shifted)
        self._derivs = []
        for i in range(dim):
            src = np.nonzero(self.exponents[:, i] > 0)[0]
            lowered = self.exponents[src].copy()
            lowered[:, i] -= 1
            self._derivs.append((src, self.index_of(lowered), self.exponents[src, i]))
        self._mul_tables: dict = {}

    def index_of(self, exponents) -> np.ndarray:
        exponents = np.asarray(exponents, dtype=np.int64)
        keys = exponents @ self._radix
        pos = np.searchsorted(self._sorted_keys, keys)
        return self._perm[pos]

    def block(self, k: int) -> slice:
        return slice(int(self.offsets[k]), int(self.offsets[k + 1]))

    def mul_table(self, i: int, j: int):
        key = (i, j)
        table = self._mul_tables.get(key)
        if table is None:
            a = np.arange(self.offsets[i], self.offsets[i + 1])
            b = np.arange(self.offsets[j], self.offsets[j + 1])
            sums = self.exponents[a][:, None, :] + self.exponents[b][None, :, :]
            c = self.index_of(sums.reshape(-1, self.dim)) - self.offsets[i + j]
            table = (np.repeat(a, len(b)), np.tile(b, len(a)), c)
            self._mul_tables[key] = table
        return table

    def support(self, f: np.ndarray) -> list[int]:
        nz = np.asarray(f != 0, dtype=bool)
        if not nz.any():
            return []
        blocks = np.logical_or.reduceat(nz, self.offsets[:-1])
        return [int(k) for k in np.nonzero(blocks)[0]]

    def mul(self, f: np.ndarray, g: np.ndarray) -> np.ndarray:
        """Truncated product of two coefficient vectors."""
        exact = f.dtype == object or g.dtype == object
        out = np.zeros(self.size, dtype=object if exact else np.float64)
        gdeg = self.support(g)
        if not gdeg:
            return out
        for i in self.support(f):
            for j in gdeg:
                if i + j > self.order:
                    break
                ia, ib, ic = self.mul_table(i, j)
                blk = self.block(i + j)
                prod = f[ia] * g[ib]
                if exact:
                    target = out[blk]
                    np.add.at(target, ic, prod)
                    out[blk] = target
                else:
                    out[blk] += np.bincount(ic, weights=prod, minlength=blk.stop - blk.start)
        return out

    def partial(self, f: np.ndarray, i: int) -> np.ndarray:
        """Derivative in x_i; works row-wise on 2-D arrays."""
        src, dst, factor = self._derivs[i]
        out = np.zeros_like(f)
        out[..., dst] = f[..., src] * factor
        return out


@functools.lru_cache(maxsize=None)
def monomial_basis(dim: int, order: int) -> MonomialBasis:
    return MonomialBasis(dim, order)


@functools.lru_cache(maxsize=None)
def index_sets(dim: int, q: int) -> tuple:
    return tuple(itertools.combinations(range(dim), q))


@functools.lru_cache(maxsize=None)
def _set_position(dim: int, q: int) -> dict:
    return {s: n for n, s in enumerate(index_sets(dim, q))}


def _sort_sign(seq) -> int:
    inversions = sum(1 for a, b in itertools.combinations(seq, 2) if a > b)
    return -1 if inversions % 2 else 1


@functools.lru_cache(maxsize=None)
def _wedge_table(dim: int, p: int, q: int) -> tuple:
    pos = _set_position(dim, p + q)
    table = []
    for a, left in enumerate(index_sets(dim, p)):
        for b, right in enumerate(index_sets(dim, q)):
            if set(left) & set(right):
                continue
            merged = left + right
            table.append((a, b, pos[tuple(sorted(merged))], _sort_sign(merged)))
    return tuple(table)


@functools.lru_cache(maxsize=None)
def _odd_derivative_table(dim: int, q: int, i: int, side: str) -> tuple:
    """Derivative of xi_I by the odd variable xi_i from the left or right."""
    pos = _set_position(dim, q - 1)
    table = []
    for a, s in enumerate(index_sets(dim, q)):
        if i in s:
            k = s.index(i)
            moves = k if side == "left" else q - 1 - k
            rest = s[:k] + s[k + 1:]
            table.append((a, pos[rest], -1 if moves % 2 else 1))
    return tuple(table)


def _zeros(shape, exact: bool) -> np.ndarray:
    return np.zeros(shape, dtype=object if exact else np.float64)


def _clean(arr: np.ndarray) -> np.ndarray:
    if arr.dtype != object:
        arr[np.abs(arr) < DROP_TOL] = 0.0
    return arr


def _wedge_arrays(basis, left, p, right, q) -> np.ndarray:
    exact = left.dtype == object or right.dtype == object
    out = _zeros((math.comb(basis.dim, p + q), basis.size), exact)
    if p + q > basis.dim:
        return out
    left_nz = [bool(np.any(row != 0)) for row in left]
    right_nz = [bool(np.any(row != 0)) for row in right]
    for a, b, c, sign in _wedge_table(basis.dim, p, q):
        if left_nz[a] and right_nz[b]:
            prod = basis.mul(left[a], right[b])
            out[c] = out[c] + prod if sign > 0 else out[c] - prod
    return out


def _odd_derivative(arr, dim, q, i, side) -> np.ndarray:
    out = _zeros((math.comb(dim, q - 1), arr.shape[1]), arr.dtype == object)
    for a, c, sign in _odd_derivative_table(dim, q, i, side):
        out[c] = out[c] + sign * arr[a]
    return out


def to_scalar(value, exact: bool):
    """Coerce a number to the scalar type of the given mode."""
    if exact:
        if isinstance(value, np.integer):
            value = int(value)
        elif isinstance(value, np.floating):
            value = float(value)
        f = Fraction(value)
        # numpy integers leak into numerator/denominator otherwise and overflow later
        return Fraction(int(f.numerator), int(f.denominator))
    return float(value)


@dataclass(frozen=True, eq=False)
class PolyMultivector:
    """A q-vector field with polynomial coefficients truncated at ``trunc_order``.

    ``coeffs[row, col]`` is the coefficient of ``x^exponents[col]`` in front
    of ``d_{I_0} ^ ... ^ d_{I_{q-1}}`` for ``I = index_sets(dim, q)[row]``.
    """

    dim: int
    q: int
    trunc_order: int
    coeffs: np.ndarray

    def __post_init__(self):
        if not 0 <= self.q <= 3:
            raise UnsupportedDegreeError(f"multivector degree {self.q} not in 0..3")
        basis = monomial_basis(self.dim, self.trunc_order)
        arr = np.array(self.coeffs, dtype=object if self.coeffs.dtype == object else np.float64)
        expected = (math.comb(self.dim, self.q), basis.size)
        if arr.shape != expected:
            raise StructuralError(f"coefficient array shape {arr.shape}, expected {expected}")
        arr = _clean(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "coeffs", arr)

    # construction -------------------------------------------------------
    @classmethod
    def zero(cls, dim, q, trunc_order=DEFAULT_ORDER, rational=False):
        basis = monomial_basis(dim, trunc_order)
        return cls(dim, q, trunc_order, _zeros((math.comb(dim, q), basis.size), rational))

    @classmethod
    def from_terms(cls, dim, q, terms, trunc_order=DEFAULT_ORDER, rational=False):
        """Build from ``{(indices, exponents): coeff}``; repeated keys add up.

        Index tuples need not be sorted: reordering picks up the permutation
        sign, and repeated indices give zero.  Terms above the truncation
        order are discarded.
        """
        basis = monomial_basis(dim, trunc_order)
        pos = _set_position(dim, q)
        arr = _zeros((math.comb(dim, q), basis.size), rational)
        for (indices, exponents), value in dict(terms).items():
            indices = tuple(int(i) for i in indices)
            exponents = tuple(int(e) for e in exponents)
            if len(indices) != q or len(exponents) != dim:
                raise InputError(f"term {indices}/{exponents} does not fit dim={dim} q={q}")
            if any(i < 0 or i >= dim for i in indices) or min(exponents, default=0) < 0:
                raise InputError(f"term {indices}/{exponents} out of range")
            if len(set(indices)) < q or sum(exponents) > trunc_order:
                continue
            col = int(basis.index_of(np.array(exponents)))
            arr[pos[tuple(sorted(indices))], col] += _sort_sign(indices) * to_scalar(value, rational)
        return cls(dim, q, trunc_order, arr)

    @classmethod
    def coordinate(cls, i, dim, trunc_order=DEFAULT_ORDER, rational=False):
        e = [0] * dim
        e[i] = 1
        return cls.from_terms(dim, 0, {((), tuple(e)): 1}, trunc_order, rational)

    # basic views ---------------------------------------------------------
    @property
    def basis(self) -> MonomialBasis:
        return monomial_basis(self.dim, self.trunc_order)

    @property
    def rational(self) -> bool:
        return self.coeffs.dtype == object

    def terms(self) -> dict:
        sets = index_sets(self.dim, self.q)
        rows, cols = np.nonzero(self.coeffs != 0)
        exps = self.basis.exponents
        return {
            (sets[r], tuple(int(e) for e in exps[c])): self.coeffs[r, c]
            for r, c in zip(rows, cols)
        }

    def coefficient(self, indices, exponents):
        row = _set_position(self.dim, self.q)[tuple(indices)]
        col = int(self.basis.index_of(np.array(exponents)))
        return self.coeffs[row, col]

    def is_zero(self) -> bool:
        return not np.any(self.coeffs != 0)

    def lowest_degree(self, tol: float = 0.0) -> int:
        """Smallest degree carrying a coefficient larger than ``tol``; ``trunc_order + 1`` if none."""
        nz = np.any(np.abs(self.coeffs) > tol, axis=0)
        if not nz.any():
            return self.trunc_order + 1
        return int(self.basis.degrees[np.argmax(nz)])

    def max_abs(self):
        if self.coeffs.size == 0:
            return 0.0
        return max(abs(v) for v in self.coeffs.ravel()) if self.rational else float(np.max(np.abs(self.coeffs)))

    def degree_part(self, k: int) -> "PolyMultivector":
        arr = _zeros(self.coeffs.shape, self.rational)
        if 0 <= k <= self.trunc_order:
            blk = self.basis.block(k)
            arr[:, blk] = self.coeffs[:, blk]
        return self._like(arr)

    def truncated(self, max_degree: int) -> "PolyMultivector":
        """Drop every monomial of degree above ``max_degree``."""
        arr = np.array(self.coeffs)
        arr[:, self.basis.degrees > max_degree] = 0
        return self._like(arr)

    def linear_part(self) -> "PolyMultivector":
        return self.degree_part(1)

    def with_order(self, trunc_order: int) -> "PolyMultivector":
        """Re-embed at another truncation order, dropping terms that no longer fit."""
        return PolyMultivector.from_terms(self.dim, self.q, self.terms(), trunc_order, self.rational)

    def as_rational(self) -> "PolyMultivector":
        arr = np.empty(self.coeffs.shape, dtype=object)
        arr.ravel()[:] = [to_scalar(v, True) for v in self.coeffs.ravel()]
        return self._like(arr)

    def as_float(self) -> "PolyMultivector":
        return self._like(np.array(self.coeffs, dtype=np.float64))

    def _like(self, arr) -> "PolyMultivector":
        return PolyMultivector(self.dim, self.q, self.trunc_order, arr)

    # arithmetic ----------------------------------------------------------
    def _check_same(self, other):
        check_compatible(self, other)
        if self.q != other.q:
            raise StructuralError(f"degree mismatch {self.q} vs {other.q}")

    def __add__(self, other):
        self._check_same(other)
        return self._like(self.coeffs + other.coeffs)

    def __sub__(self, other):
        self._check_same(other)
        return self._like(self.coeffs - other.coeffs)

    def __neg__(self):
        return self._like(-self.coeffs)

    def __mul__(self, scalar):
        return self._like(self.coeffs * to_scalar(scalar, self.rational))

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self._like(self.coeffs * (1 / to_scalar(scalar, self.rational)))

    def __eq__(self, other):
        if not isinstance(other, PolyMultivector):
            return NotImplemented
        return (
            (self.dim, self.q, self.trunc_order) == (other.dim, other.q, other.trunc_order)
            and bool(np.all(self.coeffs == other.coeffs))
        )

    __hash__ = None

    def allclose(self, other, atol=1e-12) -> bool:
        self._check_same(other)
        return bool(np.all(np.abs(np.asarray(self.coeffs - other.coeffs, dtype=float)) <= atol))

    def __repr__(self):
        return f"PolyMultivector(dim={self.dim}, q={self.q}, N={self.trunc_order}, terms={len(self.terms())})"

    # serialization -------------------------------------------------------
    def to_json(self) -> dict:
        terms = []
        for (indices, exponents), value in sorted(self.terms().items()):
            if isinstance(value, Fraction):
                value = int(value) if value.denominator == 1 else f"{value.numerator}/{value.denominator}"
            else:
                value = float(value)
            terms.append({"indices": list(indices), "exponents": list(exponents), "coeff": value})
        return {"dim": self.dim, "q": self.q, "trunc_order": self.trunc_order, "terms": terms}

    @classmethod
    def from_json(cls, data: dict, rational: bool | None = None) -> "PolyMultivector":
        try:
            dim, q, order = int(data["dim"]), int(data["q"]), int(data.get("trunc_order", DEFAULT_ORDER))
            raw = data["terms"]
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed multivector JSON: {exc}") from exc
        if rational is None:
            rational = any(isinstance(t.get("coeff"), str) for t in raw)
        terms: dict = {}
        for t in raw:
            indices = tuple(t["indices"])
            if list(indices) != sorted(set(indices)):
                raise InputError(f"indices {indices} not strictly increasing")
            if len(t["exponents"]) != dim:
                raise InputError(f"exponents {t['exponents']} do not have length {dim}")
            value = Fraction(t["coeff"]) if rational else float(t["coeff"])
            key = (indices, tuple(t["exponents"]))
            terms[key] = terms.get(key, 0) + value
        return cls.from_terms(dim, q, terms, order, rational)


def check_compatible(a, b):
    if a.dim != b.dim or a.trunc_order != b.trunc_order:
        raise StructuralError(
            f"incompatible operands: dim {a.dim}/{b.dim}, trunc_order {a.trunc_order}/{b.trunc_order}"
        )
    if a.rational != b.rational:
        raise StructuralError("cannot mix exact and floating-point operands")


def wedge(W: PolyMultivector, V: PolyMultivector) -> PolyMultivector:
    check_compatible(W, V)
    if W.q + V.q > 3:
        raise UnsupportedDegreeError(f"wedge degree {W.q + V.q} exceeds 3")
    arr = _wedge_arrays(W.basis, W.coeffs, W.q, V.coeffs, V.q)
    return PolyMultivector(W.dim, W.q + V.q, W.trunc_order, arr)


def schouten_bracket(W: PolyMultivector, V: PolyMultivector) -> PolyMultivector:
    """Schouten-Nijenhuis bracket, normalised so that ``[X, .]`` is the Lie derivative.

    With odd coordinates xi_i standing for d_i,
    ``[W, V] = sum_i (W d/dxi_i)(d_i V) - (d_i W)(d/dxi_i V)``
    using the right odd derivative on W and the left one on V.
    """
    check_compatible(W, V)
    a, b = W.q, V.q
    degree = a + b - 1
    if degree < 0 or degree > 3:
        raise UnsupportedDegreeError(f"bracket degree {degree} not in 0..3")
    basis = W.basis
    d = W.dim
    out = _zeros((math.comb(d, degree), basis.size), W.rational)
    if degree > d:
        return PolyMultivector(d, degree, W.trunc_order, out)
    for i in range(d):
        if a >= 1:
            w_odd = _odd_derivative(W.coeffs, d, a, i, "right")
            out = out + _wedge_arrays(basis, w_odd, a - 1, basis.partial(V.coeffs, i), b)
        if b >= 1:
            v_odd = _odd_derivative(V.coeffs, d, b, i, "left")
            out = out - _wedge_arrays(basis, basis.partial(W.coeffs, i), a, v_odd, b - 1)
    return PolyMultivector(d, degree, W.trunc_order, out)


def jacobi_defect(pi: PolyMultivector):
    """Largest coefficient of [pi, pi] in absolute value."""
    if pi.q != 2:
        raise PreconditionError("jacobi_defect needs a bivector")
    return schouten_bracket(pi, pi).max_abs()


def apply_vector_field(X: PolyMultivector, f: np.ndarray) -> np.ndarray:
    """X(f) for a coefficient vector f."""
    basis = X.basis
    out = _zeros(basis.size, X.rational)
    for j in range(X.dim):
        if np.any(X.coeffs[j] != 0):
            out = out + basis.mul(X.coeffs[j], basis.partial(f, j))
    return out


def random_multivector(dim, q, trunc_order=DEFAULT_ORDER, *, min_degree=0, max_degree=None,
                       scale=1.0, rng=None) -> PolyMultivector:
    """Gaussian coefficients on every monomial with degree in [min_degree, max_degree]."""
    rng = np.random.default_rng(rng)
    basis = monomial_basis(dim, trunc_order)
    max_degree = trunc_order if max_degree is None else min(max_degree, trunc_order)
    mask = (basis.degrees >= min_degree) & (basis.degrees <= max_degree)
    arr = np.zeros((math.comb(dim, q), basis.size))
    arr[:, mask] = scale * rng.standard_normal((arr.shape[0], int(mask.sum())))
    return PolyMultivector(dim, q, trunc_order, arr)


# formal diffeomorphisms -----------------------------------------------------

IDENTITY_TO_FIRST_ORDER = "identity_to_first_order"
LINEAR_PART_INVERTIBLE = "linear_part_invertible"


def _exact_inverse(matrix: np.ndarray) -> np.ndarray:
    inv = sympy.Matrix(matrix.tolist()).inv()
    return np.array([[Fraction(int(v.p), int(v.q)) for v in row] for row in inv.tolist()], dtype=object)


@dataclass(frozen=True, eq=False)
class FormalDiffeo:
    """A polynomial map fixing the origin; ``maps[i]`` is the i-th component."""

    dim: int
    trunc_order: int
    maps: np.ndarray
    kind: str = LINEAR_PART_INVERTIBLE

    def __post_init__(self):
        basis = monomial_basis(self.dim, self.trunc_order)
        arr = np.array(self.maps, dtype=object if self.maps.dtype == object else np.float64)
        if arr.shape != (self.dim, basis.size):
            raise StructuralError(f"map array shape {arr.shape}, expected {(self.dim, basis.size)}")
        arr = _clean(arr)
        if np.any(arr[:, 0] != 0):
            raise PreconditionError("formal diffeomorphisms must fix the origin")
        lin = self.linear_matrix_of(arr)
        if self.kind == IDENTITY_TO_FIRST_ORDER:
            if np.any(np.abs(np.asarray(lin - np.eye(self.dim), dtype=float)) > 1e-12):
                raise PreconditionError("linear part is not the identity")
        elif self.kind != LINEAR_PART_INVERTIBLE:
            raise StructuralError(f"unknown diffeomorphism class {self.kind!r}")
        if abs(np.linalg.det(np.asarray(lin, dtype=float))) < 1e-300:
            raise PreconditionError("linear part is not invertible")
        arr.setflags(write=False)
        object.__setattr__(self, "maps", arr)

    def linear_matrix_of(self, arr=None):
        arr = self.maps if arr is None else arr
        return np.array(arr[:, 1:1 + self.dim])

    @property
    def linear_matrix(self) -> np.ndarray:
        return self.linear_matrix_of()

    @property
    def rational(self) -> bool:
        return self.maps.dtype == object

    @property
    def basis(self) -> MonomialBasis:
        return monomial_basis(self.dim, self.trunc_order)

    @property
    def components(self) -> list[PolyMultivector]:
        return [PolyMultivector(self.dim, 0, self.trunc_order, row[None, :]) for row in self.maps]

    @classmethod
    def identity(cls, dim, trunc_order=DEFAULT_ORDER, rational=False):
        return cls.linear(np.eye(dim, dtype=int), trunc_order, rational, kind=IDENTITY_TO_FIRST_ORDER)

    @classmethod
    def linear(cls, matrix, trunc_order=DEFAULT_ORDER, rational=False, kind=LINEAR_PART_INVERTIBLE):
        matrix = np.asarray(matrix)
        dim = matrix.shape[0]
        basis = monomial_basis(dim, trunc_order)
        arr = _zeros((dim, basis.size), rational)
        for i in range(dim):
            for j in range(dim):
                arr[i, 1 + j] = to_scalar(matrix[i, j], rational) if rational else float(matrix[i, j])
        return cls(dim, trunc_order, arr, kind)

    @classmethod
    def scaling(cls, t, dim, trunc_order=DEFAULT_ORDER, rational=False):
        if not t > 0:
            raise PreconditionError("scaling factor must be positive")
        scalar = to_scalar(t, rational)
        matrix = np.empty((dim, dim), dtype=object)
        matrix[:] = 0 * scalar
        for i in range(dim):
            matrix[i, i] = scalar
        return cls.linear(matrix, trunc_order, rational)

    def allclose(self, other, atol=1e-12) -> bool:
        check_compatible(self, other)
        return bool(np.all(np.abs(np.asarray(self.maps - other.maps, dtype=float)) <= atol))

    def __eq__(self, other):
        if not isinstance(other, FormalDiffeo):
            return NotImplemented
        return (self.dim, self.trunc_order) == (other.dim, other.trunc_order) and bool(
            np.all(self.maps == other.maps)
        )

    __hash__ = None


def _power_table(phi: FormalDiffeo) -> np.ndarray:
    """Row b holds the coefficients of phi^{exponents[b]}."""
    basis = phi.basis
    table = _zeros((basis.size, basis.size), phi.rational)
    table[0, 0] = 1
    for b in range(1, basis.size):
        table[b] = basis.mul(table[basis.parent[b]], phi.maps[basis.var[b]])
    return table


def matmul(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """A @ B; exact operands are summed one nonzero column of A at a time."""
    if A.dtype != object and B.dtype != object:
        return A @ B
    out = np.full((A.shape[0],) + B.shape[1:], 0, dtype=object)
    for j in np.nonzero(np.any(A != 0, axis=0))[0]:
        col = A[:, j]
        for i in np.nonzero(col != 0)[0]:
            out[i] = out[i] + col[i] * B[j]
    return out


def _compose_coeffs(arr: np.ndarray, phi: FormalDiffeo) -> np.ndarray:
    return matmul(arr, _power_table(phi))


def _polymat_mul(basis, A, B) -> np.ndarray:
    n, m, k = A.shape[0], B.shape[1], A.shape[1]
    exact = A.dtype == object or B.dtype == object
    out = _zeros((n, m, basis.size), exact)
    for i in range(n):
        for j in range(m):
            acc = out[i, j]
            for c in range(k):
                if np.any(A[i, c] != 0) and np.any(B[c, j] != 0):
                    acc = acc + basis.mul(A[i, c], B[c, j])
            out[i, j] = acc
    return out


def inverse_jacobian(phi: FormalDiffeo) -> np.ndarray:
    """(D phi)^{-1} as a d x d matrix of truncated polynomials, via a Neumann series."""
    basis = phi.basis
    d = phi.dim
    jac = np.stack([basis.partial(phi.maps, i) for i in range(d)], axis=1)  # jac[j, i] = d_i phi_j
    lin = np.array(jac[:, :, 0])
    lin_inv = _exact_inverse(lin) if phi.rational else np.linalg.inv(np.asarray(lin, dtype=float))
    rest = np.array(jac)
    rest[:, :, 0] = 0
    K = np.einsum("ac,cbm->abm", lin_inv, rest)
    eye = _zeros((d, d, basis.size), phi.rational)
    for i in range(d):
        eye[i, i, 0] = 1
    total, term = eye.copy(), eye
    for _ in range(phi.trunc_order):
        term = -_polymat_mul(basis, term, K)
        if not np.any(term != 0):
            break
        total = total + term
    return np.einsum("abm,bc->acm", total, lin_inv)


def _exterior_power(basis, mat: np.ndarray, q: int) -> np.ndarray:
    """Matrix of q x q minors of a polynomial matrix, indexed by index sets."""
    d = mat.shape[0]
    sets = index_sets(d, q)
    exact = mat.dtype == object
    out = _zeros((len(sets), len(sets), basis.size), exact)
    perms = [(p, _sort_sign(p)) for p in itertools.permutations(range(q))]
    for r, rows in enumerate(sets):
        for c, cols in enumerate(sets):
            acc = out[r, c]
            for perm, sign in perms:
                prod = mat[rows[0], cols[perm[0]]]
                for t in range(1, q):
                    prod = basis.mul(prod, mat[rows[t], cols[perm[t]]])
                acc = acc + prod if sign > 0 else acc - prod
            out[r, c] = acc
    return out


def pullback(phi: FormalDiffeo, W: PolyMultivector) -> PolyMultivector:
    """phi^* W = Lambda^q (D phi)^{-1} . (W o phi).

    The degree-N coefficient is exact only when W vanishes at the origin (or
    phi is linear): otherwise it would need the degree N+1 part of phi.
    """
    check_compatible(phi, W)
    basis = W.basis
    composed = _compose_coeffs(W.coeffs, phi)
    if W.q == 0:
        return W._like(composed)
    minors = _exterior_power(basis, inverse_jacobian(phi), W.q)
    out = _zeros(W.coeffs.shape, W.rational)
    for r in range(out.shape[0]):
        acc = out[r]
        for c in range(out.shape[0]):
            if np.any(composed[c] != 0):
                acc = acc + basis.mul(minors[r, c], composed[c])
        out[r] = acc
    return W._like(out)


def compose(phi: FormalDiffeo, chi: FormalDiffeo) -> FormalDiffeo:
    """phi o chi."""
    check_compatible(phi, chi)
    kind = (
        IDENTITY_TO_FIRST_ORDER
        if phi.kind == chi.kind == IDENTITY_TO_FIRST_ORDER
        else LINEAR_PART_INVERTIBLE
    )
    return FormalDiffeo(phi.dim, phi.trunc_order, _compose_coeffs(phi.maps, chi), kind)


def inverse(phi: FormalDiffeo) -> FormalDiffeo:
    """Formal inverse by the fixed point psi = L^{-1}(x - g(psi))."""
    lin = phi.linear_matrix
    lin_inv = _exact_inverse(lin) if phi.rational else np.linalg.inv(np.asarray(lin, dtype=float))
    nonlinear = np.array(phi.maps)
    nonlinear[:, 1:1 + phi.dim] = 0
    psi = FormalDiffeo.linear(lin_inv, phi.trunc_order, phi.rational, kind=phi.kind)
    base = np.array(psi.maps)
    for _ in range(phi.trunc_order):
        maps = base - matmul(np.asarray(lin_inv), _compose_coeffs(nonlinear, psi))
        new = FormalDiffeo(phi.dim, phi.trunc_order, maps, phi.kind)
        if new == psi:
            break
        psi = new
    return psi


def lie_series_flow(X: PolyMultivector, order_guard: int | None = None) -> FormalDiffeo:
    """Time-one flow of X as exp(X) applied to the coordinate functions."""
    if X.q != 1:
        raise PreconditionError("lie_series_flow needs a vector field")
    basis = X.basis
    if np.any(X.coeffs[:, : basis.offsets[2]] != 0):
        raise PreconditionError("vector field must vanish to second order at the origin")
    guard = X.trunc_order + 1 if order_guard is None else order_guard
    maps = _zeros((X.dim, basis.size), X.rational)
    for i in range(X.dim):
        maps[i, 1 + i] = 1
    term = np.array(maps)
    n = 0
    while np.any(term != 0):
        n += 1
        if n > guard:
            raise PreconditionError(f"Lie series did not terminate within {guard} terms")
        term = np.stack([apply_vector_field(X, row) for row in term])
        scale = Fraction(1, n) if X.rational else 1.0 / n
        term = term * scale
        maps = maps + term
    return FormalDiffeo(X.dim, X.trunc_order, maps, IDENTITY_TO_FIRST_ORDER)


def rescale_pullback(t, W: PolyMultivector) -> PolyMultivector:
    """mu_t^* W for mu_t(x) = t x: degree-m coefficients of a q-vector scale by t^(m-q)."""
    if not t > 0:
        raise PreconditionError("rescaling parameter must be positive")
    t = to_scalar(t, W.rational)
    powers = [t ** (int(m) - W.q) for m in range(W.trunc_order + 1)]
    factors = np.array([powers[int(m)] for m in W.basis.degrees], dtype=object if W.rational else float)
    return W._like(W.coeffs * factors[None, :])


def rescaled_family(pi: PolyMultivector, t) -> PolyMultivector:
    """t mu_t^* pi, which tends to the linear part of pi as t -> 0."""
    if pi.q != 2:
        raise PreconditionError("rescaled_family needs a bivector")
    if np.any(pi.coeffs[:, 0] != 0):
        raise PreconditionError("bivector must vanish at the origin")
    return rescale_pullback(t, pi) * t
