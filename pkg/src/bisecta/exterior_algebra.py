"""Finite-dimensional exterior algebra Lambda^k(C^d).

Grade-k vectors are dense coefficient arrays over the canonical basis
``e_s = e_{s_1} ^ ... ^ e_{s_k}`` indexed by increasing multi-indices
``s = {s_1 < ... < s_k}`` of ``{0, ..., d-1}``.  Basis order: subsets
encoded as bitmasks ``sum(1 << s_i)``, ascending.  This pins down every
sign computation reproducibly.

Conventions:

* the canonical bases are orthonormal; inner products are
  conjugate-linear in the *second* argument (the adjointness identity
  between wedge and interior multiplication is stated for vectors with
  real coefficients, so the convention never affects it),
* ``Lambda^k`` for ``k`` outside ``[0, d]`` is a genuine zero space,
  represented by empty coefficient arrays, so grade-shifting operations
  are total.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations
from math import comb

import numpy as np

__all__ = [
    "GradeBasis",
    "KVector",
    "GradeMap",
    "grade_basis",
    "permutation_sign",
    "wedge_matrix",
    "interior_matrix",
    "wedge",
    "interior",
    "inner",
    "extend_hom",
    "split_normal_tangential",
    "join_normal_tangential",
    "embed_tangential",
]


@dataclass(frozen=True, eq=False)
class GradeBasis:
    """Basis bookkeeping for Lambda^k(C^d).

    ``subsets`` lists the increasing multi-indices in canonical
    (bitmask-ascending) order; ``index`` maps a multi-index back to its
    array position.
    """

    dimension: int
    grade: int
    subsets: tuple[tuple[int, ...], ...]
    index: dict[tuple[int, ...], int] = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.subsets)

    def index_of(self, subset) -> int:
        return self.index[tuple(subset)]

    def zero(self) -> "KVector":
        return KVector(self, np.zeros(self.size, dtype=np.complex128))


@lru_cache(maxsize=None)
def grade_basis(dimension: int, grade: int) -> GradeBasis:
    """Canonical basis of Lambda^grade(C^dimension); zero space off-range."""
    if dimension < 0:
        raise ValueError("dimension must be nonnegative")
    if grade < 0 or grade > dimension:
        return GradeBasis(dimension, grade, (), {})
    subsets = sorted(combinations(range(dimension), grade),
                     key=lambda s: sum(1 << i for i in s))
    subsets = tuple(subsets)
    assert len(subsets) == comb(dimension, grade)
    return GradeBasis(dimension, grade, subsets,
                      {s: i for i, s in enumerate(subsets)})


@dataclass(frozen=True, eq=False)
class KVector:
    """A k-vector: coefficients over a GradeBasis.  Immutable."""

    basis: GradeBasis
    coeffs: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.coeffs, dtype=np.complex128)
        if arr.shape != (self.basis.size,):
            raise ValueError(
                f"coefficient length {arr.shape} does not match basis size "
                f"{self.basis.size}")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "coeffs", arr)

    def __add__(self, other: "KVector") -> "KVector":
        self._check_same_basis(other)
        return KVector(self.basis, self.coeffs + other.coeffs)

    def __sub__(self, other: "KVector") -> "KVector":
        self._check_same_basis(other)
        return KVector(self.basis, self.coeffs - other.coeffs)

    def __mul__(self, scalar) -> "KVector":
        return KVector(self.basis, self.coeffs * scalar)

    __rmul__ = __mul__

    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def _check_same_basis(self, other: "KVector"):
        if self.basis is not other.basis and (
                self.basis.dimension != other.basis.dimension
                or self.basis.grade != other.basis.grade):
            raise ValueError("basis mismatch")


@dataclass(frozen=True, eq=False)
class GradeMap:
    """Dense linear map between two grade spaces."""

    source: GradeBasis
    target: GradeBasis
    matrix: np.ndarray

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=np.complex128)
        if mat.shape != (self.target.size, self.source.size):
            raise ValueError("matrix shape does not match grade bases")
        object.__setattr__(self, "matrix", mat)

    def __call__(self, v: KVector) -> KVector:
        if v.basis.size != self.source.size:
            raise ValueError("grade mismatch")
        return KVector(self.target, self.matrix @ v.coeffs)

    def __matmul__(self, other: "GradeMap") -> "GradeMap":
        return GradeMap(other.source, self.target, self.matrix @ other.matrix)


def permutation_sign(j: int, s) -> int:
    """Sign (-1)^{#{s_i : j > s_i}} of moving e_j past the prefix of e_s."""
    return -1 if sum(1 for x in s if x < j) % 2 else 1


@lru_cache(maxsize=None)
def wedge_matrix(dimension: int, j: int, grade: int) -> np.ndarray:
    """Matrix of e_j ^ (.) : Lambda^grade -> Lambda^{grade+1}."""
    src = grade_basis(dimension, grade)
    dst = grade_basis(dimension, grade + 1)
    mat = np.zeros((dst.size, src.size))
    for col, s in enumerate(src.subsets):
        if j in s:
            continue
        t = tuple(sorted(s + (j,)))
        mat[dst.index_of(t), col] = permutation_sign(j, s)
    mat.flags.writeable = False
    return mat


@lru_cache(maxsize=None)
def interior_matrix(dimension: int, j: int, grade: int) -> np.ndarray:
    """Matrix of e_j _| (.) : Lambda^grade -> Lambda^{grade-1}.

    Transpose of the wedge matrix one grade down: wedge and interior
    multiplication by a real vector are mutually adjoint.
    """
    mat = wedge_matrix(dimension, j, grade - 1).T
    return mat


def _vector_coeffs(v: KVector) -> np.ndarray:
    if v.basis.grade != 1:
        raise ValueError("left factor must have grade 1")
    return v.coeffs


def wedge(v: KVector, w: KVector) -> KVector:
    """Exterior product v ^ w of a vector with a k-vector."""
    if v.basis.dimension != w.basis.dimension:
        raise ValueError("dimension mismatch")
    d, k = w.basis.dimension, w.basis.grade
    out = grade_basis(d, k + 1).zero().coeffs.copy()
    for j, vj in enumerate(_vector_coeffs(v)):
        if vj != 0:
            out += vj * (wedge_matrix(d, j, k) @ w.coeffs)
    return KVector(grade_basis(d, k + 1), out)


def interior(v: KVector, w: KVector) -> KVector:
    """Interior product v _| w of a vector with a k-vector."""
    if v.basis.dimension != w.basis.dimension:
        raise ValueError("dimension mismatch")
    d, k = w.basis.dimension, w.basis.grade
    out = grade_basis(d, k - 1).zero().coeffs.copy()
    for j, vj in enumerate(_vector_coeffs(v)):
        if vj != 0:
            out += vj * (interior_matrix(d, j, k) @ w.coeffs)
    return KVector(grade_basis(d, k - 1), out)


def inner(a: KVector, b: KVector) -> complex:
    """Hermitian inner product, conjugate-linear in the second slot."""
    a._check_same_basis(b)
    return complex(np.sum(a.coeffs * np.conj(b.coeffs)))


def extend_hom(L, k: int):
    """Extend a linear map on Lambda^1 as a wedge-homomorphism to Lambda^k.

    ``L(e_{s_1} ^ ... ^ e_{s_k}) := (L e_{s_1}) ^ ... ^ (L e_{s_k})``;
    for k = 0 the extension is the identity on scalars.  Accepts a dense
    (d, d) matrix or a GradeMap on grade 1, returns the matching kind.
    """
    as_map = isinstance(L, GradeMap)
    mat = L.matrix if as_map else np.asarray(L, dtype=np.complex128)
    d = mat.shape[0]
    if mat.shape != (d, d):
        raise ValueError("expected a square matrix on Lambda^1")
    src = grade_basis(d, k)
    cols = []
    for s in src.subsets:
        acc = np.array([1.0 + 0j])
        for g, idx in enumerate(s):
            acc_out = np.zeros(grade_basis(d, g + 1).size, dtype=np.complex128)
            for j in range(d):
                if mat[j, idx] != 0:
                    acc_out += mat[j, idx] * (wedge_matrix(d, j, g) @ acc)
            acc = acc_out
        cols.append(acc)
    out = (np.column_stack(cols) if cols
           else np.zeros((src.size, src.size), dtype=np.complex128))
    if as_map:
        return GradeMap(src, src, out)
    return out


@lru_cache(maxsize=None)
def _split_indices(n: int, k: int):
    """Positions of the e_0-containing / e_0-free parts of Lambda^k(R^{1+n}).

    Returns (normal_positions, tangential_positions) into the ambient
    basis, ordered to match grade_basis(n, k-1) and grade_basis(n, k).
    Since 0 precedes every other index, e_s = e_0 ^ e_{s \\ {0}} carries
    sign +1 and the maps are plain index shuffles.
    """
    amb = grade_basis(1 + n, k)
    normal_src = grade_basis(n, k - 1)
    tang_src = grade_basis(n, k)
    normal_pos = np.array(
        [amb.index_of((0,) + tuple(i + 1 for i in s))
         for s in normal_src.subsets], dtype=np.intp)
    tang_pos = np.array(
        [amb.index_of(tuple(i + 1 for i in s))
         for s in tang_src.subsets], dtype=np.intp)
    return normal_pos, tang_pos


def split_normal_tangential(w: KVector) -> tuple[KVector, KVector]:
    """Split f in Lambda^k(R^{1+n}) as f = e_0 ^ a + b, no e_0 in a, b.

    Returns (a, b) over the R^n bases with indices shifted down by one.
    """
    d, k = w.basis.dimension, w.basis.grade
    n = d - 1
    normal_pos, tang_pos = _split_indices(n, k)
    a = KVector(grade_basis(n, k - 1), w.coeffs[normal_pos])
    b = KVector(grade_basis(n, k), w.coeffs[tang_pos])
    return a, b


def join_normal_tangential(a: KVector, b: KVector) -> KVector:
    """Inverse of split_normal_tangential: e_0 ^ a + b in Lambda^k(R^{1+n})."""
    n = a.basis.dimension
    if b.basis.dimension != n:
        raise ValueError("dimension mismatch")
    k = b.basis.grade
    if a.basis.grade != k - 1 and a.basis.size > 0:
        raise ValueError("grades must differ by one")
    amb = grade_basis(1 + n, k)
    out = np.zeros(amb.size, dtype=np.complex128)
    normal_pos, tang_pos = _split_indices(n, k)
    out[normal_pos] = a.coeffs
    out[tang_pos] = b.coeffs
    return KVector(amb, out)


def embed_tangential(w: KVector) -> KVector:
    """Embed Lambda^k(R^n) into Lambda^k(R^{1+n}) (indices shifted up)."""
    n = w.basis.dimension
    return join_normal_tangential(grade_basis(n, w.basis.grade - 1).zero(), w)


def split_join_matrices(n: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Dense matrices of the normal/tangential embeddings into Lambda^k(R^{1+n}).

    Returns (S_normal, S_tangential); stacking them columnwise gives the
    unitary identification Lambda^{k-1}(R^n) + Lambda^k(R^n) = Lambda^k(R^{1+n}).
    """
    amb = grade_basis(1 + n, k)
    normal_pos, tang_pos = _split_indices(n, k)
    s_norm = np.zeros((amb.size, len(normal_pos)))
    s_tan = np.zeros((amb.size, len(tang_pos)))
    s_norm[normal_pos, np.arange(len(normal_pos))] = 1.0
    s_tan[tang_pos, np.arange(len(tang_pos))] = 1.0
    return s_norm, s_tan
