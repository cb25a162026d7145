"""Homotopy operators for the Poisson complex of a linear Poisson structure.

The differential ``[pi_g, .]`` preserves polynomial degree, so the complex
splits into finite slices ``(q, k)``: q-vectors with homogeneous degree-k
coefficients.  On each slice we use the metric induced by the invariant
inner product (exterior factors with the dual form, monomials with the
Fischer product), pass to orthonormal coordinates, and invert the Hodge
Laplacian ``delta delta^T + delta^T delta`` on its range.  Then

    h1 = delta^* G  on q = 2,        h2 = G delta^*  on q = 3,

and ``[pi_g, h1 V] + h2 [pi_g, V] = V`` on every slice without harmonic
bivectors.

A slice vector is ``coeffs[:, block(k)].ravel()`` of a PolyMultivector, so
its index is ``row * M_k + monomial``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.csgraph
import scipy.sparse.linalg
from sympy import QQ
from sympy.polys.matrices import DomainMatrix

from .errors import HarmonicObstruction, PreconditionError, StructuralError
from .jets import (
    FormalDiffeo,
    PolyMultivector,
    _odd_derivative_table,
    _power_table,
    _wedge_table,
    index_sets,
    matmul,
    monomial_basis,
)
from .lie import LieAlgebraSpec

PINV_TOL = 1e-10
DENSE_LIMIT = 1200
_DROP = 1e-12


def _to_fraction(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(float(x))


def _delta_triplets(g: LieAlgebraSpec, q: int, k: int):
    """Entries (row, col, value) of [pi_g, .] from slice (q, k) to (q + 1, k)."""
    d = g.dim
    c = g.structure_constants
    basis = monomial_basis(d, max(k, 1))
    blk = basis.block(k)
    exps = basis.exponents[blk]
    mk = len(exps)
    start = basis.offsets[k]
    rows, cols, vals = [], [], []
    # (pi d/dxi_i) ^ d_i W  with  pi d/dxi_i = sum_{a,c} c[a,i,c] x_c xi_a
    for i in range(d):
        src = np.nonzero(exps[:, i] > 0)[0]
        for cc in range(d):
            moved = exps[src].copy()
            moved[:, i] -= 1
            moved[:, cc] += 1
            dst = basis.index_of(moved) - start
            factor = exps[src, i].astype(float)
            for a in range(d):
                coef = c[a, i, cc]
                if coef == 0:
                    continue
                for _, j_row, k_row, sign in (t for t in _wedge_table(d, 1, q) if t[0] == a):
                    rows.append(k_row * mk + dst)
                    cols.append(j_row * mk + src)
                    vals.append(("lin", sign, coef, factor))
    # - (d_i pi) ^ (d/dxi_i W)  with  d_i pi = sum_{a<b} c[a,b,i] xi_a xi_b
    if q >= 1:
        mono = np.arange(mk)
        for i in range(d):
            for pair_row, (a, b) in enumerate(index_sets(d, 2)):
                coef = c[a, b, i]
                if coef == 0:
                    continue
                for j_row, jp_row, sign1 in _odd_derivative_table(d, q, i, "left"):
                    for p_row, jp2, k_row, sign2 in _wedge_table(d, 2, q - 1):
                        if p_row == pair_row and jp2 == jp_row:
                            rows.append(k_row * mk + mono)
                            cols.append(j_row * mk + mono)
                            vals.append(("const", -sign1 * sign2, coef, None))
    return rows, cols, vals, mk


def delta_matrix(g: LieAlgebraSpec, q: int, k: int, rational: bool = False):
    """Matrix of [pi_g, .] on slice (q, k): scipy CSR, or a dense Fraction array."""
    d = g.dim
    rows, cols, vals, mk = _delta_triplets(g, q, k)
    shape = (math.comb(d, q + 1) * mk, math.comb(d, q) * mk)
    if not rational:
        r = np.concatenate(rows) if rows else np.zeros(0, int)
        cidx = np.concatenate(cols) if cols else np.zeros(0, int)
        v = np.concatenate(
            [
                sign * coef * (factor if factor is not None else np.ones(len(rr)))
                for (kind, sign, coef, factor), rr in zip(vals, rows)
            ]
        ) if vals else np.zeros(0)
        mat = sp.coo_matrix((v, (r, cidx)), shape=shape).tocsr()
        mat.sum_duplicates()
        mat.data[np.abs(mat.data) < _DROP] = 0.0
        mat.eliminate_zeros()
        return mat
    dense = np.empty(shape, dtype=object)
    dense[...] = Fraction(0)
    for (kind, sign, coef, factor), rr, cc in zip(vals, rows, cols):
        exact = sign * _to_fraction(coef)
        for n, (r0, c0) in enumerate(zip(rr, cc)):
            dense[r0, c0] += exact * (int(factor[n]) if factor is not None else 1)
    return dense


def _exterior_gram(dual_form: np.ndarray, q: int) -> np.ndarray:
    sets = index_sets(dual_form.shape[0], q)
    gram = np.ones((len(sets), len(sets)))
    for a, s in enumerate(sets):
        for b, t in enumerate(sets):
            gram[a, b] = np.linalg.det(dual_form[np.ix_(s, t)]) if q else 1.0
    return gram


def _poly_gram(form: np.ndarray, k: int) -> np.ndarray:
    """Fischer Gram matrix of degree-k monomials for the form on the variables."""
    d = form.shape[0]
    chol = np.linalg.cholesky(form)
    table = _power_table(FormalDiffeo.linear(chol, k))
    basis = monomial_basis(d, k)
    blk = basis.block(k)
    subst = table[blk, blk]
    return subst @ np.diag(basis.factorials[blk]) @ subst.T


def slice_metric(g: LieAlgebraSpec, q: int, k: int, rational: bool = False):
    """Metric on slice (q, k): a diagonal vector when the inner product is diagonal, else dense."""
    form = np.eye(g.dim) if g.inner_product is None else g.inner_product
    basis = monomial_basis(g.dim, max(k, 1))
    blk = basis.block(k)
    diagonal = np.count_nonzero(form - np.diag(np.diag(form))) == 0
    if diagonal:
        weights = np.diag(form)
        ext = np.array([np.prod(1.0 / weights[list(s)]) for s in index_sets(g.dim, q)])
        mono = basis.factorials[blk] * np.prod(weights[None, :] ** basis.exponents[blk], axis=1)
        diag = np.kron(ext, mono)
        if rational:
            return np.array([_to_fraction(v) for v in diag], dtype=object)
        return diag
    if rational:
        raise PreconditionError("exact mode needs a diagonal inner product")
    return np.kron(_exterior_gram(np.linalg.inv(form), q), _poly_gram(form, k))


@dataclass(frozen=True, eq=False)
class ComplexSlice:
    lie_algebra: LieAlgebraSpec
    poly_degree: int
    mv_degree: int
    basis: tuple
    delta: object
    metric: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.basis)


def slice_basis(dim: int, q: int, k: int) -> tuple:
    basis = monomial_basis(dim, max(k, 1))
    exps = [tuple(int(e) for e in row) for row in basis.exponents[basis.block(k)]]
    return tuple((s, e) for s in index_sets(dim, q) for e in exps)


def build_slice(g: LieAlgebraSpec, q: int, k: int, rational: bool = False) -> ComplexSlice:
    if not 0 <= q <= 3:
        raise PreconditionError(f"multivector degree {q} not in 0..3")
    delta = delta_matrix(g, q, k, rational)
    if q + 1 <= g.dim:
        nxt = delta_matrix(g, q + 1, k, rational)
        square = matmul(nxt, delta)
        residual = (
            max((abs(v) for v in np.asarray(square).ravel()), default=0)
            if rational
            else (abs(square).max() if square.nnz else 0.0)
        )
        if residual > (0 if rational else 1e-9):
            raise StructuralError(f"delta^2 != 0 on slice (q={q}, k={k}): {residual}")
    return ComplexSlice(g, k, q, slice_basis(g.dim, q, k), delta, slice_metric(g, q, k, rational))


# orthonormal coordinates --------------------------------------------------

class _Frame:
    """Change to orthonormal coordinates for a slice metric: v = R^T w."""

    def __init__(self, metric):
        self.diagonal = metric.ndim == 1
        if self.diagonal:
            self.scale = np.sqrt(metric)
        else:
            self.chol = np.linalg.cholesky(metric)

    def to_orthonormal(self, w):  # R^T w
        return self.scale * w if self.diagonal else self.chol.T @ w

    def from_orthonormal(self, v):  # R^{-T} v
        if self.diagonal:
            return v / self.scale
        return scipy.linalg.solve_triangular(self.chol.T, v, lower=False)

    def conjugate(self, delta, target: "_Frame"):
        """delta expressed in orthonormal coordinates on both sides."""
        if self.diagonal and target.diagonal:
            out = sp.diags(target.scale) @ delta @ sp.diags(1.0 / self.scale)
            return sp.csr_matrix(out)
        dense = delta.toarray() if sp.issparse(delta) else np.asarray(delta)
        left = target.to_orthonormal(dense)
        right = self.from_orthonormal(np.eye(dense.shape[1]))
        return sp.csr_matrix(left @ right)


def _laplacian(down, up, size):
    """down: delta from q-1 to q, up: delta from q to q+1, both orthonormal."""
    lap = sp.csr_matrix((size, size))
    if down is not None and down.shape[1]:
        lap = lap + down @ down.T
    if up is not None and up.shape[0]:
        lap = lap + up.T @ up
    lap = sp.csr_matrix(lap)
    if lap.nnz:
        lap.data[np.abs(lap.data) < _DROP * np.abs(lap.data).max()] = 0.0
        lap.eliminate_zeros()
    return lap


@dataclass
class _Block:
    index: np.ndarray
    solve: object
    harmonic: np.ndarray  # orthonormal basis of the harmonic space (columns)


class _Green:
    """Pseudo-inverse of a slice Laplacian, block by block along its sparsity components."""

    def __init__(self, lap: sp.csr_matrix):
        self.size = lap.shape[0]
        self.blocks: list[_Block] = []
        self.harmonic_dim = 0
        self.min_eigenvalue = math.inf
        self.max_eigenvalue = 0.0
        if self.size == 0:
            return
        ncomp, labels = scipy.sparse.csgraph.connected_components(lap, directed=False)
        order = np.argsort(labels, kind="stable")
        bounds = np.searchsorted(labels[order], np.arange(ncomp + 1))
        for n in range(ncomp):
            idx = order[bounds[n]:bounds[n + 1]]
            sub = lap[idx][:, idx]
            if len(idx) <= DENSE_LIMIT:
                self.blocks.append(self._dense(idx, sub.toarray()))
            else:
                self.blocks.append(self._sparse(idx, sp.csc_matrix(sub)))

    def _record(self, eig):
        self.max_eigenvalue = max(self.max_eigenvalue, float(np.max(eig, initial=0.0)))

    def _dense(self, idx, block):
        eig, vec = np.linalg.eigh(block)
        self._record(eig)
        cutoff = PINV_TOL * max(float(np.max(np.abs(eig))), 1.0)
        keep = eig > cutoff
        harmonic = vec[:, ~keep]
        self.harmonic_dim += harmonic.shape[1]
        if keep.any():
            self.min_eigenvalue = min(self.min_eigenvalue, float(eig[keep].min()))
        green = (vec[:, keep] / eig[keep]) @ vec[:, keep].T
        return _Block(idx, lambda v, m=green: m @ v, harmonic)

    def _sparse(self, idx, block):
        top = scipy.sparse.linalg.eigsh(block, k=1, which="LA", return_eigenvectors=False)[0]
        cutoff = PINV_TOL * max(abs(top), 1.0)
        shift = 1e-3 * max(abs(top), 1.0)
        count = min(8, block.shape[0] - 2)
        low = np.sort(
            scipy.sparse.linalg.eigsh(block, k=count, sigma=-shift, which="LM", return_eigenvectors=False)
        )
        self._record(np.array([top]))
        if np.any(low <= cutoff):
            return self._dense(idx, block.toarray())
        self.min_eigenvalue = min(self.min_eigenvalue, float(low[0]))
        lu = scipy.sparse.linalg.splu(block)
        return _Block(idx, lu.solve, np.zeros((len(idx), 0)))

    def apply(self, v: np.ndarray) -> np.ndarray:
        out = np.zeros_like(v, dtype=float)
        for b in self.blocks:
            out[b.index] = b.solve(v[b.index])
        return out

    def harmonic_part(self, v: np.ndarray) -> np.ndarray:
        out = np.zeros_like(v, dtype=float)
        for b in self.blocks:
            if b.harmonic.shape[1]:
                out[b.index] = b.harmonic @ (b.harmonic.T @ v[b.index])
        return out

    def matrix(self) -> np.ndarray:
        return np.column_stack([self.apply(e) for e in np.eye(self.size)]) if self.size else np.zeros((0, 0))


def _dm(arr) -> DomainMatrix:
    rows = [[QQ(v.numerator, v.denominator) for v in map(Fraction, row)] for row in arr]
    return DomainMatrix(rows, arr.shape, QQ)


def _from_dm(mat: DomainMatrix) -> np.ndarray:
    out = np.empty(mat.shape, dtype=object)
    for i, row in enumerate(mat.to_list()):
        out[i] = [Fraction(int(v.numerator), int(v.denominator)) for v in row]
    return out


def _exact_green(lap: DomainMatrix, metric) -> tuple:
    """Exact pseudo-inverse of a Laplacian, orthogonal for the diagonal metric."""
    n = lap.shape[0]
    if n == 0:
        return lap, 0
    null = lap.nullspace()
    harmonic = null.shape[0]
    if not harmonic:
        return lap.inv(), 0
    # G = (L + P)^{-1} - P with P the metric-orthogonal projector onto ker L
    basis = null.transpose()
    mdiag = DomainMatrix.diag([QQ(v.numerator, v.denominator) for v in metric], QQ, (n, n))
    proj = basis * (basis.transpose() * mdiag * basis).inv() * basis.transpose() * mdiag
    return (lap + proj).inv() - proj, harmonic


@dataclass
class _SliceOps:
    """Everything needed to apply h1 / h2 on polynomial degree k."""

    k: int
    green: object
    delta12: object  # q=1 -> q=2, orthonormal (float) or plain (exact)
    delta23: object
    frames: dict = field(default_factory=dict)
    exact: dict = field(default_factory=dict)


@dataclass
class HomotopyOperators:
    lie_algebra: LieAlgebraSpec
    k_max: int
    rational: bool
    harmonic_dims: dict
    diagnostics: list
    _ops: dict = field(repr=False, default_factory=dict)

    def _slice_vector(self, W: PolyMultivector, k: int) -> np.ndarray:
        return np.array(W.coeffs[:, W.basis.block(k)]).ravel()

    def apply_h1_slice(self, k: int, v: np.ndarray) -> np.ndarray:
        ops = self._ops[k]
        if self.rational:
            return matmul(ops.exact["h1"], v)
        w = ops.frames[2].to_orthonormal(v)
        return ops.frames[1].from_orthonormal(ops.delta12.T @ ops.green.apply(w))

    def apply_h2_slice(self, k: int, v: np.ndarray) -> np.ndarray:
        ops = self._ops[k]
        if self.rational:
            return matmul(ops.exact["h2"], v)
        w = ops.frames[3].to_orthonormal(v)
        return ops.frames[2].from_orthonormal(ops.green.apply(ops.delta23.T @ w))

    def h1_matrix(self, k: int) -> np.ndarray:
        n = math.comb(self.lie_algebra.dim, 2) * _block_size(self.lie_algebra.dim, k)
        if self.rational:
            return self._ops[k].exact["h1"]
        return np.column_stack([self.apply_h1_slice(k, e) for e in np.eye(n)])

    def h2_matrix(self, k: int) -> np.ndarray:
        n = math.comb(self.lie_algebra.dim, 3) * _block_size(self.lie_algebra.dim, k)
        if self.rational:
            return self._ops[k].exact["h2"]
        return np.column_stack([self.apply_h2_slice(k, e) for e in np.eye(n)])

    def _apply(self, W: PolyMultivector, q_in: int, q_out: int, fn) -> PolyMultivector:
        if W.q != q_in:
            raise PreconditionError(f"expected a {q_in}-vector, got q={W.q}")
        if W.dim != self.lie_algebra.dim:
            raise StructuralError("dimension does not match the Lie algebra")
        if W.trunc_order > self.k_max:
            raise PreconditionError(f"trunc_order {W.trunc_order} exceeds k_max {self.k_max}")
        if W.rational != self.rational:
            raise StructuralError("scalar mode of operand and operators differ")
        out = PolyMultivector.zero(W.dim, q_out, W.trunc_order, W.rational)
        arr = np.array(out.coeffs)
        basis = W.basis
        for k in range(W.trunc_order + 1):
            v = self._slice_vector(W, k)
            if not np.any(v != 0):
                continue
            if self.harmonic_dims.get((2, k), 0) > 0:
                raise HarmonicObstruction(
                    f"slice (q=2, k={k}) has harmonic dimension {self.harmonic_dims[(2, k)]}; "
                    "the homotopy identity fails there"
                )
            blk = basis.block(k)
            arr[:, blk] = fn(k, v).reshape(arr.shape[0], -1)
        return PolyMultivector(W.dim, q_out, W.trunc_order, arr)

    def h1(self, Z: PolyMultivector) -> PolyMultivector:
        return self._apply(Z, 2, 1, self.apply_h1_slice)

    def h2(self, T: PolyMultivector) -> PolyMultivector:
        return self._apply(T, 3, 2, self.apply_h2_slice)

    def diagnostics_json(self) -> list:
        return list(self.diagnostics)


def _block_size(dim: int, k: int) -> int:
    return math.comb(k + dim - 1, dim - 1)


def _diag_entry(q, k, size, green) -> dict:
    return {
        "q": q,
        "k": k,
        "dim": size,
        "harmonic_dim": green.harmonic_dim,
        "min_nonzero_eigenvalue": None if math.isinf(green.min_eigenvalue) else green.min_eigenvalue,
        "green_norm": None if math.isinf(green.min_eigenvalue) else 1.0 / green.min_eigenvalue,
    }


def build_homotopy(g: LieAlgebraSpec, k_max: int, rational: bool = False, diagnose=(1, 2)) -> HomotopyOperators:
    """Homotopy operators on every slice k <= k_max, plus harmonic diagnostics in degrees ``diagnose``."""
    d = g.dim
    if d < 2:
        raise PreconditionError("need dimension at least 2 for bivectors")
    harmonic: dict = {}
    diagnostics: list = []
    ops: dict = {}
    for k in range(k_max + 1):
        deltas = {q: delta_matrix(g, q, k, rational) for q in range(0, min(3, d) + 1) if q + 1 <= d or q == 0}
        metrics = {q: slice_metric(g, q, k, rational) for q in range(0, min(4, d + 1))}
        if rational:
            ops[k], h2dim = _exact_slice(k, deltas, metrics, d)
            harmonic[(2, k)] = h2dim
            diagnostics.append({"q": 2, "k": k, "dim": len(metrics[2]), "harmonic_dim": h2dim,
                                "min_nonzero_eigenvalue": None, "green_norm": None})
            continue
        frames = {q: _Frame(m) for q, m in metrics.items()}
        ortho = {q: frames[q].conjugate(deltas[q], frames[q + 1]) for q in deltas if q + 1 in frames}
        greens = {}
        for q in sorted(set(diagnose) | {2}):
            if q > d:
                continue
            size = len(metrics[q]) if metrics[q].ndim == 1 else metrics[q].shape[0]
            greens[q] = _Green(_laplacian(ortho.get(q - 1), ortho.get(q), size))
            harmonic[(q, k)] = greens[q].harmonic_dim
            if q in diagnose:
                diagnostics.append(_diag_entry(q, k, size, greens[q]))
        ops[k] = _SliceOps(k, greens[2], ortho.get(1), ortho.get(2), frames)
    return HomotopyOperators(g, k_max, rational, harmonic, diagnostics, ops)


def _exact_slice(k, deltas, metrics, d):
    def adjoint(delta, m_src, m_dst):
        # delta^* = M_src^{-1} delta^T M_dst for diagonal metrics
        return _dm((delta.T * m_dst[None, :]) / m_src[:, None])

    d12, d23 = deltas[1], deltas.get(2)
    a12 = adjoint(d12, metrics[1], metrics[2])
    lap = _dm(d12) * a12
    a23 = None
    if d23 is not None and d23.shape[0]:
        a23 = adjoint(d23, metrics[2], metrics[3])
        lap = lap + a23 * _dm(d23)
    green, h2dim = _exact_green(lap, metrics[2])
    h1 = _from_dm(a12 * green) if lap.shape[0] else np.zeros((d12.shape[1], 0), dtype=object)
    if a23 is not None:
        h2 = _from_dm(green * a23)
    else:
        h2 = np.zeros((len(metrics[2]), 0), dtype=object)
    return _SliceOps(k, None, d12, d23, {}, {"h1": h1, "h2": h2}), h2dim


def homotopy_apply(h: HomotopyOperators, Z: PolyMultivector) -> PolyMultivector:
    """Apply h1 slice by slice; raises on slices with harmonic bivectors."""
    return h.h1(Z)
