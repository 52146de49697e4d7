"""Discrete periodic torus [0, L)^n, k-vector fields and Fourier multipliers.

Fields live on an m^n grid (m a power of two) and are band-limited by
construction, so constant-coefficient first order operators act exactly
as Fourier multipliers.  The L2 norm carries the measure (L/m)^n per
grid point; the frequency representation stores the actual Fourier
coefficients c_k of f(x) = sum_k c_k exp(i xi_k . x), for which the same
norm is L^n sum |c_k|^2 (Parseval holds to rounding).

Nyquist handling: the m/2 wavenumber rows have no negation partner on
the grid, so every multiplier symbol is zeroed there.  This keeps the
discrete operators exactly self-adjoint.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .exterior_algebra import (
    GradeBasis,
    grade_basis,
    interior_matrix,
    wedge_matrix,
)

__all__ = [
    "Grid",
    "Field",
    "LinearMap",
    "MultiplierOperator",
    "dft",
    "idft",
    "assemble_multiplier",
    "exterior_derivative_operator",
    "interior_derivative_operator",
    "exterior_derivative",
    "interior_derivative",
    "div_grad_operator",
    "hodge_projections",
    "range_projector",
    "ellipticity_constant",
    "random_field",
    "write_field",
    "read_field",
]

DUMP_MAGIC = b"BSCT"
DUMP_VERSION = 1


class Grid:
    """Uniform periodic grid on the torus [0, L)^n.

    n in {1, 2}; m a power of two.  Wavenumbers are the integers
    k in [-m/2, m/2) per axis (numpy fft layout); physical frequencies
    are xi = (2 pi / L) k.
    """

    def __init__(self, n: int, m: int, L: float = 2.0 * np.pi):
        if n not in (1, 2):
            raise ValueError("spatial dimension n must be 1 or 2")
        if m < 4 or (m & (m - 1)) != 0:
            raise ValueError("points per axis m must be a power of two >= 4")
        self.n = int(n)
        self.m = int(m)
        self.L = float(L)
        self.shape = (self.m,) * self.n
        self.npoints = self.m ** self.n
        self.spacing = self.L / self.m
        self.cell_measure = self.spacing ** self.n
        k1 = np.fft.fftfreq(self.m, d=1.0 / self.m).astype(np.int64)
        self._k_axes = tuple(np.meshgrid(*([k1] * self.n), indexing="ij"))

    def wavenumbers(self):
        """Integer wavenumber arrays, one (m,)*n array per axis."""
        return self._k_axes

    def frequencies(self):
        """Physical frequencies xi_j = (2 pi / L) k_j per axis."""
        scale = 2.0 * np.pi / self.L
        return tuple(scale * k for k in self._k_axes)

    def frequency_norm(self):
        """|xi| at every grid frequency."""
        return np.sqrt(sum(np.abs(x) ** 2 for x in self.frequencies()))

    def nyquist_mask(self):
        """True where any wavenumber component equals -m/2."""
        ny = -(self.m // 2)
        mask = np.zeros(self.shape, dtype=bool)
        for k in self._k_axes:
            mask |= (k == ny)
        return mask

    def points(self):
        """Coordinate arrays of the grid points, one per axis."""
        x1 = np.arange(self.m) * self.spacing
        return tuple(np.meshgrid(*([x1] * self.n), indexing="ij"))

    def compatible(self, other: "Grid") -> bool:
        return (self.n == other.n and self.m == other.m
                and np.isclose(self.L, other.L))

    def __repr__(self):
        return f"Grid(n={self.n}, m={self.m}, L={self.L!r})"


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=np.complex128)
    arr.flags.writeable = False
    return arr


class Field:
    """Immutable fiber-valued field with lazy physical/frequency caching.

    values shape: grid.shape + (fiber_dim,).  The fiber is either plain
    C^N or a grade space (basis is then set).
    """

    __slots__ = ("grid", "fiber_dim", "basis", "_phys", "_freq")

    def __init__(self, grid: Grid, *, physical=None, frequency=None,
                 basis: GradeBasis | None = None):
        if (physical is None) == (frequency is None):
            raise ValueError("provide exactly one of physical/frequency")
        self.grid = grid
        values = physical if physical is not None else frequency
        values = np.asarray(values, dtype=np.complex128)
        if values.shape[:grid.n] != grid.shape or values.ndim != grid.n + 1:
            raise ValueError(
                f"values shape {values.shape} incompatible with grid {grid.shape}")
        self.fiber_dim = values.shape[-1]
        self.basis = basis
        if basis is not None and basis.size != self.fiber_dim:
            raise ValueError("fiber dimension does not match grade basis")
        self._phys = _freeze(values) if physical is not None else None
        self._freq = _freeze(values) if frequency is not None else None

    @classmethod
    def from_physical(cls, grid, values, basis=None):
        return cls(grid, physical=values, basis=basis)

    @classmethod
    def from_frequency(cls, grid, values, basis=None):
        return cls(grid, frequency=values, basis=basis)

    @property
    def physical(self) -> np.ndarray:
        if self._phys is None:
            axes = tuple(range(self.grid.n))
            self._phys = _freeze(
                np.fft.ifftn(self._freq, axes=axes) * self.grid.npoints)
        return self._phys

    @property
    def frequency(self) -> np.ndarray:
        if self._freq is None:
            axes = tuple(range(self.grid.n))
            self._freq = _freeze(
                np.fft.fftn(self._phys, axes=axes) / self.grid.npoints)
        return self._freq

    @property
    def representation(self) -> str:
        """Representation the field was constructed in."""
        return "physical" if self._phys is not None else "frequency"

    def norm(self) -> float:
        if self._freq is not None:
            return float(np.sqrt(
                self.grid.L ** self.grid.n * np.sum(np.abs(self._freq) ** 2)))
        return float(np.sqrt(
            self.grid.cell_measure * np.sum(np.abs(self._phys) ** 2)))

    def inner(self, other: "Field") -> complex:
        """L2 pairing, conjugate-linear in the second argument (= other)."""
        if not self.grid.compatible(other.grid):
            raise ValueError("grid mismatch")
        return complex(self.grid.cell_measure *
                       np.sum(self.physical * np.conj(other.physical)))

    def flat(self) -> np.ndarray:
        """Physical values flattened to length npoints * fiber_dim (C order)."""
        return self.physical.reshape(-1)

    @classmethod
    def from_flat(cls, grid, vec, fiber_dim, basis=None):
        return cls.from_physical(
            grid, np.asarray(vec).reshape(grid.shape + (fiber_dim,)), basis=basis)

    def __add__(self, other):
        self._check(other)
        return Field.from_physical(self.grid, self.physical + other.physical,
                                   basis=self.basis)

    def __sub__(self, other):
        self._check(other)
        return Field.from_physical(self.grid, self.physical - other.physical,
                                   basis=self.basis)

    def __mul__(self, scalar):
        if self._freq is not None and self._phys is None:
            return Field.from_frequency(self.grid, self._freq * scalar,
                                        basis=self.basis)
        return Field.from_physical(self.grid, self.physical * scalar,
                                   basis=self.basis)

    __rmul__ = __mul__

    def _check(self, other):
        if not self.grid.compatible(other.grid) or self.fiber_dim != other.fiber_dim:
            raise ValueError("field mismatch")


def dft(f: Field) -> Field:
    """Discrete Fourier transform; requires a physical-representation field."""
    if f.representation != "physical":
        raise ValueError("dft expects a physical-representation field")
    return Field.from_frequency(f.grid, f.frequency, basis=f.basis)


def idft(f: Field) -> Field:
    """Inverse transform; requires a frequency-representation field."""
    if f.representation != "frequency":
        raise ValueError("idft expects a frequency-representation field")
    return Field.from_physical(f.grid, f.physical, basis=f.basis)


# ---------------------------------------------------------------------------
# linear operator handles


class LinearMap:
    """Linear operator on field space: matrix-free action + dense realization.

    Subclasses implement apply_values(values) on frequency- or
    physical-side arrays of shape grid.shape + (source_dim,) + extra
    batch axes are supported by apply_batch.
    """

    grid: Grid
    source_dim: int
    target_dim: int
    source_basis = None
    target_basis = None

    def apply(self, f: Field) -> Field:
        raise NotImplementedError

    def apply_batch(self, fields: list[Field]) -> list[Field]:
        return [self.apply(f) for f in fields]

    def dense(self) -> np.ndarray:
        """Dense matrix on flattened physical values (cached)."""
        cached = getattr(self, "_dense", None)
        if cached is None:
            cached = self._build_dense()
            cached.flags.writeable = False
            self._dense = cached
        return cached

    def _build_dense(self) -> np.ndarray:
        k_in = self.grid.npoints * self.source_dim
        cols = np.eye(k_in, dtype=np.complex128)
        batch = cols.reshape(self.grid.shape + (self.source_dim, k_in))
        out = self._apply_array_batch(batch)
        k_out = self.grid.npoints * self.target_dim
        return out.reshape(k_out, k_in)

    def _apply_array_batch(self, batch: np.ndarray) -> np.ndarray:
        """Apply to physical values with one trailing batch axis."""
        n_b = batch.shape[-1]
        outs = []
        for i in range(n_b):
            f = Field.from_physical(self.grid, batch[..., i],
                                    basis=self.source_basis)
            outs.append(self.apply(f).physical)
        return np.stack(outs, axis=-1)

    # small composition algebra -------------------------------------------

    def __matmul__(self, other: "LinearMap") -> "LinearMap":
        return ComposedMap(self, other)

    def __add__(self, other: "LinearMap") -> "LinearMap":
        return SumMap(self, other)

    def __sub__(self, other: "LinearMap") -> "LinearMap":
        return SumMap(self, ScaledMap(-1.0, other))

    def __mul__(self, scalar) -> "LinearMap":
        return ScaledMap(scalar, self)

    __rmul__ = __mul__

    def operator_norm(self) -> float:
        return float(np.linalg.norm(self.dense(), 2))


class IdentityMap(LinearMap):
    def __init__(self, grid, dim, basis=None):
        self.grid, self.source_dim, self.target_dim = grid, dim, dim
        self.source_basis = self.target_basis = basis

    def apply(self, f: Field) -> Field:
        return f

    def _apply_array_batch(self, batch):
        return batch


class ScaledMap(LinearMap):
    def __init__(self, scalar, op: LinearMap):
        self.scalar, self.op = complex(scalar), op
        self.grid = op.grid
        self.source_dim, self.target_dim = op.source_dim, op.target_dim
        self.source_basis, self.target_basis = op.source_basis, op.target_basis

    def apply(self, f: Field) -> Field:
        return self.op.apply(f) * self.scalar

    def _apply_array_batch(self, batch):
        return self.op._apply_array_batch(batch) * self.scalar


class SumMap(LinearMap):
    def __init__(self, a: LinearMap, b: LinearMap):
        if a.source_dim != b.source_dim or a.target_dim != b.target_dim:
            raise ValueError("incompatible shapes in operator sum")
        self.a, self.b = a, b
        self.grid = a.grid
        self.source_dim, self.target_dim = a.source_dim, a.target_dim
        self.source_basis, self.target_basis = a.source_basis, a.target_basis

    def apply(self, f: Field) -> Field:
        return self.a.apply(f) + self.b.apply(f)

    def _apply_array_batch(self, batch):
        return self.a._apply_array_batch(batch) + self.b._apply_array_batch(batch)


class ComposedMap(LinearMap):
    def __init__(self, outer: LinearMap, inner: LinearMap):
        if outer.source_dim != inner.target_dim:
            raise ValueError("incompatible shapes in operator composition")
        self.outer, self.inner = outer, inner
        self.grid = outer.grid
        self.source_dim, self.target_dim = inner.source_dim, outer.target_dim
        self.source_basis, self.target_basis = inner.source_basis, outer.target_basis

    def apply(self, f: Field) -> Field:
        return self.outer.apply(self.inner.apply(f))

    def _apply_array_batch(self, batch):
        return self.outer._apply_array_batch(self.inner._apply_array_batch(batch))


class DenseMap(LinearMap):
    """Operator given by an explicit dense matrix on flattened values."""

    def __init__(self, grid, matrix, source_dim, target_dim=None,
                 source_basis=None, target_basis=None):
        self.grid = grid
        self.source_dim = source_dim
        self.target_dim = target_dim if target_dim is not None else source_dim
        self.source_basis, self.target_basis = source_basis, target_basis
        matrix = np.ascontiguousarray(matrix, dtype=np.complex128)
        expected = (grid.npoints * self.target_dim, grid.npoints * self.source_dim)
        if matrix.shape != expected:
            raise ValueError(f"dense matrix shape {matrix.shape} != {expected}")
        matrix.flags.writeable = False
        self._dense = matrix

    def apply(self, f: Field) -> Field:
        out = self._dense @ f.flat()
        return Field.from_flat(self.grid, out, self.target_dim,
                               basis=self.target_basis)

    def _apply_array_batch(self, batch):
        n_b = batch.shape[-1]
        flat = batch.reshape(-1, n_b)
        out = self._dense @ flat
        return out.reshape(self.grid.shape + (self.target_dim, n_b))


class MultiplierOperator(LinearMap):
    """Constant-coefficient operator acting per frequency: f^(xi) -> S(xi) f^(xi).

    symbol shape: grid.shape + (target_dim, source_dim).  Self-adjoint
    flag asserts S(xi) Hermitian everywhere; homogeneous degree-1
    operators have S(0) = 0.
    """

    def __init__(self, grid: Grid, symbol: np.ndarray, *, selfadjoint=False,
                 degree=None, source_basis=None, target_basis=None):
        symbol = np.ascontiguousarray(symbol, dtype=np.complex128)
        if symbol.shape[:grid.n] != grid.shape or symbol.ndim != grid.n + 2:
            raise ValueError("symbol shape incompatible with grid")
        self.grid = grid
        self.target_dim, self.source_dim = symbol.shape[-2:]
        self.source_basis, self.target_basis = source_basis, target_basis
        if selfadjoint and symbol.size:
            herm_defect = np.max(np.abs(symbol - np.conj(symbol.swapaxes(-1, -2))))
            if herm_defect > 1e-12 * max(1.0, np.max(np.abs(symbol))):
                raise ValueError(
                    f"self-adjoint multiplier requires Hermitian symbol "
                    f"(defect {herm_defect:.2e})")
        if degree == 1 and symbol.size:
            zero = symbol[(0,) * grid.n]
            if np.max(np.abs(zero)) > 0:
                raise ValueError("homogeneous degree-1 symbol must vanish at 0")
        symbol.flags.writeable = False
        self.symbol = symbol
        self.selfadjoint = bool(selfadjoint)
        self.degree = degree

    def apply(self, f: Field) -> Field:
        if f.fiber_dim != self.source_dim:
            raise ValueError("fiber mismatch")
        out = np.einsum("...ij,...j->...i", self.symbol, f.frequency)
        return Field.from_frequency(self.grid, out, basis=self.target_basis)

    def _apply_array_batch(self, batch):
        axes = tuple(range(self.grid.n))
        freq = np.fft.fftn(batch, axes=axes) / self.grid.npoints
        out = np.einsum("...ij,...jb->...ib", self.symbol, freq)
        return np.fft.ifftn(out, axes=axes) * self.grid.npoints

    def adjoint(self) -> "MultiplierOperator":
        return MultiplierOperator(
            self.grid, np.conj(self.symbol.swapaxes(-1, -2)),
            selfadjoint=self.selfadjoint, degree=self.degree,
            source_basis=self.target_basis, target_basis=self.source_basis)

    def is_zero(self) -> bool:
        return bool(np.max(np.abs(self.symbol)) == 0.0) if self.symbol.size else True


# ---------------------------------------------------------------------------
# multiplier constructors


def _zero_nyquist(grid: Grid, symbol: np.ndarray) -> np.ndarray:
    symbol = symbol.copy()
    symbol[grid.nyquist_mask()] = 0.0
    return symbol


def assemble_multiplier(grid: Grid, fiber_matrices) -> MultiplierOperator:
    """Multiplier of D = -i sum_j A_j d/dx_j with Hermitian A_j.

    The symbol is D^(xi) = sum_j xi_j A_j, zeroed on Nyquist rows.
    """
    mats = [np.asarray(A, dtype=np.complex128) for A in fiber_matrices]
    if len(mats) != grid.n:
        raise ValueError("need one fiber matrix per axis")
    dim = mats[0].shape[0]
    for A in mats:
        if A.shape != (dim, dim):
            raise ValueError("fiber matrices must be square and equally sized")
        if np.max(np.abs(A - A.conj().T)) > 1e-12 * max(1.0, np.max(np.abs(A))):
            raise ValueError("fiber matrices must be Hermitian")
    xis = grid.frequencies()
    symbol = np.zeros(grid.shape + (dim, dim), dtype=np.complex128)
    for xi, A in zip(xis, mats):
        symbol += xi[..., None, None] * A
    symbol = _zero_nyquist(grid, symbol)
    return MultiplierOperator(grid, symbol, selfadjoint=True, degree=1)


def _derivative_symbol(grid: Grid, d: int, from_grade: int, kind: str,
                       axis_offset: int = 0) -> np.ndarray:
    """Symbol of sum_j e_{j+offset} (op) (i xi_j .) on grade from_grade of R^d."""
    build = wedge_matrix if kind == "wedge" else interior_matrix
    xis = grid.frequencies()
    to_grade = from_grade + 1 if kind == "wedge" else from_grade - 1
    rows = grade_basis(d, to_grade).size
    cols = grade_basis(d, from_grade).size
    symbol = np.zeros(grid.shape + (rows, cols), dtype=np.complex128)
    for j in range(grid.n):
        mat = build(d, j + axis_offset, from_grade)
        symbol += 1j * xis[j][..., None, None] * mat
    return _zero_nyquist(grid, symbol)


def exterior_derivative_operator(grid: Grid, from_grade: int, d: int | None = None,
                                 axis_offset: int = 0) -> MultiplierOperator:
    """Spectral realization of nabla ^ (.) : Lambda^{j} -> Lambda^{j+1}.

    d defaults to grid.n (purely spatial exterior derivative); pass
    d = 1 + n with axis_offset = 1 for the tangential derivative acting
    on ambient (t, x)-grades.
    """
    d = grid.n if d is None else d
    symbol = _derivative_symbol(grid, d, from_grade, "wedge", axis_offset)
    return MultiplierOperator(grid, symbol, degree=1,
                              source_basis=grade_basis(d, from_grade),
                              target_basis=grade_basis(d, from_grade + 1))


def interior_derivative_operator(grid: Grid, from_grade: int, d: int | None = None,
                                 axis_offset: int = 0) -> MultiplierOperator:
    """Spectral realization of nabla _| (.) : Lambda^{j} -> Lambda^{j-1}."""
    d = grid.n if d is None else d
    symbol = _derivative_symbol(grid, d, from_grade, "interior", axis_offset)
    return MultiplierOperator(grid, symbol, degree=1,
                              source_basis=grade_basis(d, from_grade),
                              target_basis=grade_basis(d, from_grade - 1))


def exterior_derivative(f: Field) -> Field:
    if f.basis is None:
        raise ValueError("field must carry a grade basis")
    op = exterior_derivative_operator(f.grid, f.basis.grade, f.basis.dimension)
    return op.apply(f)


def interior_derivative(f: Field) -> Field:
    if f.basis is None:
        raise ValueError("field must carry a grade basis")
    op = interior_derivative_operator(f.grid, f.basis.grade, f.basis.dimension)
    return op.apply(f)


def div_grad_operator(grid: Grid) -> MultiplierOperator:
    """The canonical block operator [[0, div], [-grad, 0]] on C^{1+n}.

    Fiber layout: (scalar slot, n vector slots).  Self-adjoint, degree 1;
    for n = 1 the symbol eigenvalues are +-xi.
    """
    n = grid.n
    xis = grid.frequencies()
    symbol = np.zeros(grid.shape + (1 + n, 1 + n), dtype=np.complex128)
    for j in range(n):
        symbol[..., 0, 1 + j] = 1j * xis[j]      # div row
        symbol[..., 1 + j, 0] = -(1j * xis[j])   # -grad column; Hermitian pair
    symbol = _zero_nyquist(grid, symbol)
    return MultiplierOperator(grid, symbol, selfadjoint=True, degree=1)


# ---------------------------------------------------------------------------
# Hodge projections and ellipticity


def range_projector(symbol: np.ndarray, rtol: float = 1e-12) -> np.ndarray:
    """Pointwise orthogonal projections onto the column space of symbol."""
    u, s, _ = np.linalg.svd(symbol)
    smax = s.max(axis=-1, keepdims=True)
    keep = s > rtol * np.maximum(smax, np.finfo(float).tiny)
    uk = np.where(keep[..., None, :], u, 0.0)
    return np.einsum("...ik,...jk->...ij", uk, np.conj(uk))


def hodge_projections(D: MultiplierOperator):
    """Orthogonal projections onto closure R(D) and N(D), per frequency.

    Requires D self-adjoint (range and kernel are then orthogonal
    complements pointwise in frequency).
    """
    if not D.selfadjoint:
        raise ValueError("hodge projections need a self-adjoint multiplier")
    p_range = range_projector(D.symbol)
    eye = np.eye(D.source_dim)
    p_null = eye - p_range
    mk = lambda sym: MultiplierOperator(D.grid, sym, selfadjoint=True,
                                        source_basis=D.source_basis,
                                        target_basis=D.source_basis)
    return mk(p_range), mk(p_null)


def graded_range_projector(grid: Grid, j: int, kind: str, d: int | None = None,
                           axis_offset: int = 0) -> MultiplierOperator:
    """Projector onto H^j_wedge (kind='wedge') or H^j_int (kind='interior').

    H^j_wedge = closure R(nabla ^ . : Lambda^{j-1} -> Lambda^j), and
    dually for the interior derivative from Lambda^{j+1}.
    """
    d = grid.n if d is None else d
    from_grade = j - 1 if kind == "wedge" else j + 1
    op = (exterior_derivative_operator if kind == "wedge"
          else interior_derivative_operator)(grid, from_grade, d, axis_offset)
    sym = range_projector(op.symbol)
    return MultiplierOperator(grid, sym, selfadjoint=True,
                              source_basis=grade_basis(d, j),
                              target_basis=grade_basis(d, j))


def ellipticity_constant(D: MultiplierOperator) -> float:
    """min over xi != 0 of (smallest nonzero singular value of D^(xi)) / |xi|.

    Returns 0.0 when the symbol is identically zero away from the origin
    (the partial ellipticity hypothesis fails on this grid).
    """
    grid = D.grid
    xin = grid.frequency_norm()
    active = (xin > 0) & ~grid.nyquist_mask()
    sv = np.linalg.svd(D.symbol[active], compute_uv=False)
    if sv.size == 0:
        return 0.0
    smax = sv.max(axis=-1)
    nonzero = sv > 1e-10 * np.maximum(smax, np.finfo(float).tiny)[..., None]
    ratios = []
    norms = xin[active]
    for row, keep, normxi in zip(sv, nonzero, norms):
        vals = row[keep]
        if vals.size:
            ratios.append(vals.min() / normxi)
    if not ratios:
        return 0.0
    return float(min(ratios))


# ---------------------------------------------------------------------------
# random fields and binary dumps


def random_field(grid: Grid, fiber_dim: int, seed, kmax: int | None = None,
                 basis: GradeBasis | None = None, envelope: float = 0.0) -> Field:
    """Random band-limited field with m-independent mode coefficients.

    Coefficients for wavenumbers |k_i| <= kmax are drawn in a fixed
    order, so the same seed yields the same continuum field at every
    resolution m > 2 kmax.  envelope > 0 damps mode k by
    exp(-(|k| / envelope)^2).
    """
    rng = np.random.default_rng(seed)
    kmax_eff = grid.m // 2 - 1 if kmax is None else int(kmax)
    if kmax is None:
        # resolution-tied field: draw straight into the grid layout
        coeff = (rng.standard_normal(grid.shape + (fiber_dim,))
                 + 1j * rng.standard_normal(grid.shape + (fiber_dim,)))
        coeff[grid.nyquist_mask()] = 0.0
        return Field.from_frequency(grid, coeff / np.sqrt(grid.npoints), basis=basis)
    if 2 * kmax_eff >= grid.m:
        raise ValueError("kmax too large for this grid")
    side = 2 * kmax_eff + 1
    block = (rng.standard_normal((side,) * grid.n + (fiber_dim,))
             + 1j * rng.standard_normal((side,) * grid.n + (fiber_dim,)))
    if envelope > 0:
        ks = np.arange(-kmax_eff, kmax_eff + 1)
        kk = np.meshgrid(*([ks] * grid.n), indexing="ij")
        damp = np.exp(-sum(np.asarray(k, float) ** 2 for k in kk) / envelope ** 2)
        block *= damp[..., None]
    coeff = np.zeros(grid.shape + (fiber_dim,), dtype=np.complex128)
    idx = [np.arange(-kmax_eff, kmax_eff + 1) % grid.m] * grid.n
    coeff[np.ix_(*idx)] = block
    return Field.from_frequency(grid, coeff, basis=basis)


def write_field(path, f: Field):
    """Binary dump: little-endian header (magic 'BSCT', version, n, m,
    fiber dim, representation flag), then interleaved re/im f64 values in
    row-major grid order."""
    rep_flag = 0 if f.representation == "physical" else 1
    values = f.physical if rep_flag == 0 else f.frequency
    with open(path, "wb") as fh:
        fh.write(DUMP_MAGIC)
        fh.write(struct.pack("<5I", DUMP_VERSION, f.grid.n, f.grid.m,
                             f.fiber_dim, rep_flag))
        inter = np.empty(values.size * 2, dtype="<f8")
        flatv = values.reshape(-1)
        inter[0::2] = flatv.real
        inter[1::2] = flatv.imag
        fh.write(inter.tobytes())


def read_field(path, L: float = 2.0 * np.pi) -> Field:
    """Load a binary field dump.  L is external to the format."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != DUMP_MAGIC:
            raise ValueError(f"bad magic {magic!r}, expected {DUMP_MAGIC!r}")
        version, n, m, fiber_dim, rep_flag = struct.unpack("<5I", fh.read(20))
        if version != DUMP_VERSION:
            raise ValueError(f"unsupported dump version {version}")
        raw = np.frombuffer(fh.read(), dtype="<f8")
    expected = 2 * (m ** n) * fiber_dim
    if raw.size != expected:
        raise ValueError(f"payload has {raw.size} floats, expected {expected}")
    values = (raw[0::2] + 1j * raw[1::2]).reshape((m,) * n + (fiber_dim,))
    grid = Grid(n, m, L)
    if rep_flag == 0:
        return Field.from_physical(grid, values)
    return Field.from_frequency(grid, values)
