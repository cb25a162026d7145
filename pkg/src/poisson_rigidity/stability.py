"""Rank conditions deciding vanishing of H^2 for a trivial symplectic foliation S x R^n.

The data are cohomology-level matrices: ``var`` (b2 x n) sends a normal
direction y to the class of the transverse derivative of the leafwise
symplectic form, and ``wedge`` (b3 x b1*n) sends eta (x) y to eta ^ var(y).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError, StructuralError

RANK_TOL = 1e-10


def numerical_rank(matrix: np.ndarray, tol: float = RANK_TOL) -> int:
    """Number of singular values above ``tol`` times the largest one."""
    if matrix.size == 0:
        return 0
    s = np.linalg.svd(matrix, compute_uv=False)
    if s[0] == 0:
        return 0
    return int(np.sum(s > tol * s[0]))


def _kernel_vector(matrix: np.ndarray) -> list[float]:
    _, s, vt = np.linalg.svd(matrix)
    return vt[-1].tolist()


@dataclass(frozen=True, eq=False)
class FoliationData:
    n: int
    b1: int
    b2: int
    b3: int
    var: np.ndarray
    wedge: np.ndarray
    cup: np.ndarray | None = None  # b3 x b1 x b2 table of H^1 x H^2 -> H^3, if known

    def __post_init__(self):
        for name in ("n", "b1", "b2", "b3"):
            if getattr(self, name) < 0:
                raise StructuralError(f"{name} must be nonnegative")
        wedge_shape = (self.b3, self.b1 * self.n)
        var = np.asarray(self.var, dtype=float)
        wedge = np.asarray(self.wedge, dtype=float)
        # JSON cannot express the shape of an empty matrix
        if var.size == 0 and self.b2 * self.n == 0:
            var = var.reshape(self.b2, self.n)
        if wedge.size == 0 and math.prod(wedge_shape) == 0:
            wedge = wedge.reshape(wedge_shape)
        if var.shape != (self.b2, self.n):
            raise StructuralError(f"var must be {self.b2} x {self.n}, got {var.shape}")
        if wedge.shape != wedge_shape:
            raise StructuralError(f"wedge must be {wedge_shape[0]} x {wedge_shape[1]}, got {wedge.shape}")
        object.__setattr__(self, "var", var)
        object.__setattr__(self, "wedge", wedge)
        if self.cup is not None:
            cup = np.asarray(self.cup, dtype=float)
            if cup.shape != (self.b3, self.b1, self.b2):
                raise StructuralError(f"cup must have shape {(self.b3, self.b1, self.b2)}, got {cup.shape}")
            object.__setattr__(self, "cup", cup)
            expected = wedge_from_cup(cup, var)
            if not np.allclose(expected, wedge, atol=1e-9 * max(1.0, float(np.max(np.abs(wedge), initial=0)))):
                raise StructuralError("wedge matrix is inconsistent with cup product and var")

    def to_json(self) -> dict:
        out = {"n": self.n, "b1": self.b1, "b2": self.b2, "b3": self.b3,
               "var": self.var.tolist(), "wedge": self.wedge.tolist()}
        if self.cup is not None:
            out["cup"] = self.cup.tolist()
        return out

    @classmethod
    def from_json(cls, data: dict) -> "FoliationData":
        try:
            return cls(int(data["n"]), int(data["b1"]), int(data["b2"]), int(data["b3"]),
                       np.array(data["var"], dtype=float), np.array(data["wedge"], dtype=float),
                       data.get("cup"))
        except KeyError as exc:
            raise InputError(f"foliation data missing field {exc}") from exc

    @classmethod
    def load(cls, path) -> "FoliationData":
        return cls.from_json(json.loads(Path(path).read_text()))


def wedge_from_cup(cup: np.ndarray, var: np.ndarray) -> np.ndarray:
    """Column (a, y), ordered a-major, is cup(eta_a, var[:, y])."""
    b3, b1, _ = cup.shape
    n = var.shape[1]
    return np.einsum("cab,by->cay", cup, var).reshape(b3, b1 * n)


def check_conditions(data: FoliationData) -> dict:
    rank_var = numerical_rank(data.var)
    rank_wedge = numerical_rank(data.wedge)
    c1 = rank_var == data.b2
    c2 = data.n - rank_var <= 1
    c3 = rank_wedge == data.b1 * data.n
    certificate = {"rank_var": rank_var, "rank_wedge": rank_wedge,
                   "kernel_dim_var": data.n - rank_var, "domain_dim_wedge": data.b1 * data.n}
    if not c1:
        # a class in H^2(S) orthogonal to the image of var
        certificate["cokernel_vector_var"] = _kernel_vector(data.var.T) if data.n else [1.0] + [0.0] * (data.b2 - 1)
    if not c2:
        certificate["kernel_vectors_var"] = np.linalg.svd(data.var)[2][rank_var:].tolist() if data.b2 else np.eye(data.n).tolist()
    if not c3:
        certificate["kernel_vector_wedge"] = _kernel_vector(data.wedge) if data.b3 else [1.0] + [0.0] * (data.b1 * data.n - 1)
    return {
        "c1": c1,
        "c2": c2,
        "c3": c3,
        "equivalent_H2_AS_zero": c1 and c2 and c3,
        "kernel_dim": h2_AS_kernel_dim(data),
        "certificate": certificate,
    }


def h2_AS_kernel_dim(data: FoliationData) -> int:
    """dim H^2(A_S) = dim K + dim Lambda^2(ker var), with dim K = dim coker(var) + dim ker(wedge)."""
    rank_var = numerical_rank(data.var)
    rank_wedge = numerical_rank(data.wedge)
    coker = data.b2 - rank_var
    ker_wedge = data.b1 * data.n - rank_wedge
    return coker + ker_wedge + math.comb(data.n - rank_var, 2)


def sphere_example() -> FoliationData:
    return FoliationData(1, 0, 1, 0, np.array([[1.0]]), np.zeros((0, 0)))


def torus_example() -> FoliationData:
    return FoliationData(1, 2, 1, 0, np.array([[1.0]]), np.zeros((0, 2)))
