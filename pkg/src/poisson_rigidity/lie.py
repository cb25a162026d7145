"""Finite-dimensional Lie algebras given by structure constants, and their linear Poisson structures."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError, PreconditionError
from .jets import DEFAULT_ORDER, PolyMultivector, index_sets

EIG_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class LieAlgebraSpec:
    """Structure constants ``c[i, j, k]`` with ``[e_i, e_j] = sum_k c[i, j, k] e_k``.

    ``inner_product`` is an ad-invariant positive definite form on the algebra,
    or None when unknown (as for algebras read off a Poisson bivector).
    """

    dim: int
    structure_constants: np.ndarray
    inner_product: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        c = np.array(self.structure_constants, dtype=float)
        if c.shape != (self.dim,) * 3:
            raise InputError(f"structure constants must have shape {(self.dim,) * 3}, got {c.shape}")
        if not np.allclose(c, -c.transpose(1, 0, 2), atol=1e-12):
            raise InputError("structure constants are not antisymmetric in (i, j)")
        jac = np.einsum("ijm,mkl->ijkl", c, c)
        cyclic = jac + jac.transpose(1, 2, 0, 3) + jac.transpose(2, 0, 1, 3)
        if np.max(np.abs(cyclic), initial=0.0) > 1e-9:
            raise InputError("structure constants violate the Jacobi identity")
        object.__setattr__(self, "structure_constants", c)
        if self.inner_product is not None:
            b = np.array(self.inner_product, dtype=float)
            if b.shape != (self.dim, self.dim) or not np.allclose(b, b.T):
                raise InputError("inner product must be a symmetric dim x dim matrix")
            if np.min(np.linalg.eigvalsh(b)) <= 0:
                raise InputError("inner product must be positive definite")
            object.__setattr__(self, "inner_product", b)

    def adjoint(self, i: int) -> np.ndarray:
        """Matrix of ad_{e_i}: column j holds [e_i, e_j]."""
        return self.structure_constants[i].T

    def killing_form(self) -> np.ndarray:
        ads = [self.adjoint(i) for i in range(self.dim)]
        return np.array([[np.trace(a @ b) for b in ads] for a in ads])

    def is_invariant(self, form: np.ndarray, atol: float = 1e-9) -> bool:
        """Check <[x, y], z> + <y, [x, z]> = 0 on basis vectors."""
        for i in range(self.dim):
            ad = self.adjoint(i)
            if not np.allclose(ad.T @ form + form @ ad, 0.0, atol=atol):
                return False
        return True

    def to_json(self) -> dict:
        c = self.structure_constants
        entries = [[int(i), int(j), int(k), float(c[i, j, k])] for i, j, k in zip(*np.nonzero(c)) if i < j]
        out = {"dim": self.dim, "name": self.name, "c": entries}
        if self.inner_product is not None:
            out["inner_product"] = self.inner_product.tolist()
        return out

    @classmethod
    def from_json(cls, data: dict) -> "LieAlgebraSpec":
        try:
            dim = int(data["dim"])
            c = np.zeros((dim, dim, dim))
            for i, j, k, value in data["c"]:
                c[i, j, k] = value
                c[j, i, k] = -value
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise InputError(f"malformed Lie algebra JSON: {exc}") from exc
        return cls(dim, c, data.get("inner_product"), data.get("name", ""))

    @classmethod
    def load(cls, path) -> "LieAlgebraSpec":
        return cls.from_json(json.loads(Path(path).read_text()))


def _levi_civita() -> np.ndarray:
    eps = np.zeros((3, 3, 3))
    for i, j, k in [(0, 1, 2), (1, 2, 0), (2, 0, 1)]:
        eps[i, j, k], eps[j, i, k] = 1.0, -1.0
    return eps


def so3() -> LieAlgebraSpec:
    return LieAlgebraSpec(3, _levi_civita(), np.eye(3), "so3")


def su2() -> LieAlgebraSpec:
    """su(2) in the basis i*sigma_k, where [e_a, e_b] = -2 eps_abk e_k."""
    return LieAlgebraSpec(3, -2.0 * _levi_civita(), np.eye(3), "su2")


def abelian(n: int) -> LieAlgebraSpec:
    return LieAlgebraSpec(n, np.zeros((n, n, n)), np.eye(n), f"abelian{n}")


def direct_sum(*algebras: LieAlgebraSpec) -> LieAlgebraSpec:
    dim = sum(g.dim for g in algebras)
    c = np.zeros((dim, dim, dim))
    ip = np.zeros((dim, dim))
    start = 0
    for g in algebras:
        s = slice(start, start + g.dim)
        c[s, s, s] = g.structure_constants
        ip[s, s] = np.eye(g.dim) if g.inner_product is None else g.inner_product
        start += g.dim
    return LieAlgebraSpec(dim, c, ip, "+".join(g.name for g in algebras))


BUILTIN = {
    "so3": so3,
    "su2": su2,
    "so3xso3": lambda: direct_sum(so3(), so3()),
    "so3xR": lambda: direct_sum(so3(), abelian(1)),
    "abelian1": lambda: abelian(1),
    "abelian2": lambda: abelian(2),
    "abelian3": lambda: abelian(3),
}


def builtin(name: str) -> LieAlgebraSpec:
    if name.startswith("abelian") and name not in BUILTIN:
        return abelian(int(name[len("abelian"):]))
    try:
        return BUILTIN[name]()
    except KeyError:
        raise InputError(f"unknown algebra {name!r}; choose from {sorted(BUILTIN)}") from None


def linear_poisson(g: LieAlgebraSpec, trunc_order: int = DEFAULT_ORDER, rational: bool = False) -> PolyMultivector:
    """The bivector with {x_i, x_j} = sum_k c[i, j, k] x_k."""
    terms = {}
    for i, j in index_sets(g.dim, 2):
        for k in range(g.dim):
            value = g.structure_constants[i, j, k]
            if value != 0:
                e = [0] * g.dim
                e[k] = 1
                coeff = value
                if rational:
                    coeff = int(value) if float(value).is_integer() else value
                terms[((i, j), tuple(e))] = coeff
    return PolyMultivector.from_terms(g.dim, 2, terms, trunc_order, rational)


def isotropy_at_origin(pi: PolyMultivector) -> LieAlgebraSpec:
    """Structure constants c[i, j, k] = d pi_ij / d x_k at 0."""
    if pi.q != 2:
        raise PreconditionError("isotropy algebra needs a bivector")
    if np.any(pi.coeffs[:, 0] != 0):
        raise PreconditionError("bivector does not vanish at the origin")
    d = pi.dim
    c = np.zeros((d, d, d))
    lin = np.asarray(pi.coeffs[:, 1:1 + d], dtype=float)
    for row, (i, j) in enumerate(index_sets(d, 2)):
        c[i, j] = lin[row]
        c[j, i] = -lin[row]
    return LieAlgebraSpec(d, c, None, "isotropy")


@dataclass(frozen=True)
class CenterReport:
    is_compact_type: bool
    center_dim: int
    derived_dim: int
    admissible: bool
    killing_eigenvalues: tuple = field(default=())

    def to_json(self) -> dict:
        return {
            "is_compact_type": self.is_compact_type,
            "center_dim": self.center_dim,
            "derived_dim": self.derived_dim,
            "admissible": self.admissible,
        }


def _rank(matrix: np.ndarray) -> int:
    if matrix.size == 0:
        return 0
    s = np.linalg.svd(matrix, compute_uv=False)
    return int(np.sum(s > EIG_TOL * max(1.0, s[0])))


def compact_center_check(g: LieAlgebraSpec) -> CenterReport:
    """Compact type means the Killing form is negative semidefinite with kernel equal to the center."""
    c = g.structure_constants
    d = g.dim
    # z in center iff sum_i z_i c[i, j, k] = 0 for all j, k
    center_dim = d - _rank(c.reshape(d, d * d))
    derived_dim = _rank(c.reshape(d * d, d))
    eig = np.linalg.eigvalsh(g.killing_form()) if d else np.array([])
    scale = max(1.0, float(np.max(np.abs(eig), initial=0.0)))
    negative_semidefinite = bool(np.all(eig <= EIG_TOL * scale))
    kernel_dim = int(np.sum(np.abs(eig) <= EIG_TOL * scale))
    compact = negative_semidefinite and kernel_dim == center_dim
    return CenterReport(compact, center_dim, derived_dim, compact and center_dim <= 1, tuple(eig))
