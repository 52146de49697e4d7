"""Accretive coefficients and the two-sided perturbed operator B1 D1 + D2 B2.

The defining hypotheses: D1, D2 constant-coefficient homogeneous first
order self-adjoint with orthogonal ranges and D1 D2 = 0 (partially
elliptic), B1, B2 bounded multiplication operators accretive on R(D1),
R(D2).  The two coefficients are independent of each other; in
particular D2 B2 B1 D1 need not vanish.

Dense realizations (<= 4096 unknowns) are the ground-truth oracle at
desk scale; matrix-free paths must agree with them.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .spectral_grid import (
    Field,
    Grid,
    LinearMap,
    MultiplierOperator,
    IdentityMap,
    assemble_multiplier,
    hodge_projections,
    ellipticity_constant,
)

__all__ = [
    "CoefficientField",
    "PerturbedDiracOperator",
    "AdaptedSplitting",
    "ShiftedInverse",
    "HypothesisError",
    "SplittingError",
    "accretivity_angle",
    "assemble_operator",
    "build_adapted_splitting",
    "block_resolvent",
    "kernel_range_check",
    "hypothesis_battery",
    "random_accretive_coefficients",
    "diagonal_split_pair_1d",
    "multiplier_range_basis",
    "dense_range_basis",
]

DENSE_CAP = 4096


class HypothesisError(RuntimeError):
    """A structural hypothesis failed; the message names the failed check."""


class SplittingError(RuntimeError):
    """Adapted splitting is ill-conditioned (near-failure of accretivity)."""


# ---------------------------------------------------------------------------
# multiplication operators


class CoefficientField(LinearMap):
    """Bounded multiplication operator f(x) -> B(x) f(x).

    values shape: grid.shape + (N, N).  sup_norm is the largest pointwise
    spectral norm.
    """

    def __init__(self, grid: Grid, values: np.ndarray):
        values = np.ascontiguousarray(values, dtype=np.complex128)
        if values.shape[:grid.n] != grid.shape or values.ndim != grid.n + 2 \
                or values.shape[-1] != values.shape[-2]:
            raise ValueError("coefficient values must be grid-shaped square matrices")
        values.flags.writeable = False
        self.grid = grid
        self.values = values
        self.source_dim = self.target_dim = values.shape[-1]
        self.sup_norm = float(np.linalg.norm(values, 2, axis=(-2, -1)).max())
        if not np.isfinite(self.sup_norm):
            raise ValueError("coefficient field has non-finite entries")

    def apply(self, f: Field) -> Field:
        out = np.einsum("...ij,...j->...i", self.values, f.physical)
        return Field.from_physical(self.grid, out, basis=f.basis)

    def _apply_array_batch(self, batch):
        return np.einsum("...ij,...jb->...ib", self.values, batch)

    def adjoint(self) -> "CoefficientField":
        return CoefficientField(self.grid, np.conj(self.values.swapaxes(-1, -2)))

    def is_identity(self) -> bool:
        eye = np.eye(self.source_dim)
        return bool(np.max(np.abs(self.values - eye)) < 1e-14)

    @classmethod
    def identity(cls, grid: Grid, dim: int) -> "CoefficientField":
        vals = np.broadcast_to(np.eye(dim), grid.shape + (dim, dim)).copy()
        return cls(grid, vals)

    @classmethod
    def constant(cls, grid: Grid, matrix) -> "CoefficientField":
        matrix = np.asarray(matrix, dtype=np.complex128)
        vals = np.broadcast_to(matrix, grid.shape + matrix.shape).copy()
        return cls(grid, vals)


def spectral_truncate(grid: Grid, values: np.ndarray, cutoff: int) -> np.ndarray:
    """Zero all Fourier modes of a pointwise-matrix field with any |k_i| > cutoff."""
    axes = tuple(range(grid.n))
    freq = np.fft.fftn(values, axes=axes)
    mask = np.zeros(grid.shape, dtype=bool)
    for k in grid.wavenumbers():
        mask |= np.abs(k) > cutoff
    freq[mask] = 0.0
    out = np.fft.ifftn(freq, axes=axes)
    return out


def random_accretive_coefficients(grid: Grid, dim: int, kappa: float, seed,
                                  kmax: int = 8, envelope: float = 5.0,
                                  ) -> CoefficientField:
    """Random accretive coefficient field B(x) = kappa I + (1-kappa) C(x).

    C is a spectrally smooth random matrix field, scaled to a strict
    contraction with pointwise norm at most min(1, 0.95 kappa/(1-kappa));
    this guarantees pointwise accretivity Re B >= 0.05 kappa for every
    draw.  Mode coefficients are drawn for |k_i| <= kmax in a fixed
    order with a Gaussian envelope, so the continuum field depends only
    on the seed, not on the resolution m; the sup norm is bounded via
    the l1 Fourier bound, which is also m-independent.  The spectral
    support kmax <= m/3 keeps the two-thirds de-aliasing rule satisfied
    by construction.
    """
    if not (0.0 < kappa <= 1.0):
        raise ValueError("kappa must lie in (0, 1]")
    if kmax > grid.m // 3:
        raise ValueError("kmax exceeds the two-thirds de-aliasing cutoff")
    rng = np.random.default_rng(seed)
    side = 2 * kmax + 1
    block = (rng.standard_normal((side,) * grid.n + (dim, dim))
             + 1j * rng.standard_normal((side,) * grid.n + (dim, dim)))
    ks = np.arange(-kmax, kmax + 1)
    kk = np.meshgrid(*([ks] * grid.n), indexing="ij")
    damp = np.exp(-sum(np.asarray(k, float) ** 2 for k in kk) / envelope ** 2)
    block *= damp[..., None, None]
    # m-independent sup-norm majorant: sum_k ||C^(k)||_F >= sup_x ||C(x)||_2
    l1_bound = float(np.sum(np.linalg.norm(block, "fro", axis=(-2, -1))))
    radius = min(1.0, 0.95 * kappa / (1.0 - kappa)) if kappa < 1.0 else 0.0
    coeff = np.zeros(grid.shape + (dim, dim), dtype=np.complex128)
    idx = [ks % grid.m] * grid.n
    coeff[np.ix_(*idx)] = block * (radius / max(l1_bound, 1e-300))
    axes = tuple(range(grid.n))
    contraction = np.fft.ifftn(coeff, axes=axes) * grid.npoints
    values = kappa * np.eye(dim) + (1.0 - kappa) * contraction
    return CoefficientField(grid, values)


# ---------------------------------------------------------------------------
# accretivity angles


def multiplier_range_basis(D: MultiplierOperator) -> np.ndarray:
    """Orthonormal basis (K x r dense columns) of closure R(D) for
    self-adjoint multiplier D, assembled from per-frequency range bases."""
    grid = D.grid
    dim = D.source_dim
    u, s, _ = np.linalg.svd(D.symbol.reshape(-1, dim, dim))
    smax = s.max(axis=-1, keepdims=True)
    keep = s > 1e-10 * np.maximum(smax, np.finfo(float).tiny)
    cols = []
    npts = grid.npoints
    flat_modes = np.eye(npts, dtype=np.complex128)  # frequency-side deltas
    for p in range(npts):
        r = int(keep[p].sum())
        if r == 0:
            continue
        vecs = u[p][:, keep[p]]  # dim x r
        # frequency delta at mode p, fiber mixed by vecs; L2-normalize
        block = np.zeros((npts, dim, r), dtype=np.complex128)
        block[p] = vecs
        cols.append(block.reshape(npts * dim, r))
    if not cols:
        return np.zeros((npts * dim, 0), dtype=np.complex128)
    basis_freq = np.concatenate(cols, axis=1)
    # convert frequency-side columns to physical flattened columns
    r_total = basis_freq.shape[1]
    arr = basis_freq.reshape(grid.shape + (dim, r_total))
    axes = tuple(range(grid.n))
    phys = np.fft.ifftn(arr, axes=axes) * npts
    mat = phys.reshape(npts * dim, r_total)
    # columns are orthogonal with norm sqrt(npts) in flat coords
    return mat / np.sqrt(npts)


def dense_range_basis(projector: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    """Orthonormal basis of the range of a (nearly) orthogonal projector."""
    w, v = np.linalg.eigh((projector + projector.conj().T) / 2.0)
    return v[:, w > 0.5]


def accretivity_angle(B: CoefficientField, subspace_basis: np.ndarray,
                      tol: float = 1e-12) -> float:
    """Angle of accretivity sup |arg (B f, f)| over a subspace.

    subspace_basis: orthonormal columns (flattened physical coords).
    Computed from the numerical range of the compression Q^H B Q via
    bisection on the support lines g(theta) = lambda_min(Re(e^{-i theta} M)):
    the numerical range lies in the sector of half-angle alpha iff g >= 0
    on [alpha - pi/2, pi/2 - alpha].  Returns a value >= pi/2 when
    accretivity fails.
    """
    r = subspace_basis.shape[1]
    if r == 0:
        return 0.0
    bq = B._apply_array_batch(
        subspace_basis.reshape(B.grid.shape + (B.source_dim, r)))
    m = subspace_basis.conj().T @ bq.reshape(-1, r)

    h_r = (m + m.conj().T) / 2.0
    h_i = (m - m.conj().T) / 2.0j

    def g(theta: float) -> float:
        h = np.cos(theta) * h_r + np.sin(theta) * h_i
        return float(np.linalg.eigvalsh(h)[0])

    if g(0.0) <= 0.0:
        # not accretive: report the sampled numerical-range spread
        thetas = np.linspace(-np.pi, np.pi, 720, endpoint=False)
        worst = np.pi / 2
        for th in thetas:
            h = np.cos(th) * h_r + np.sin(th) * h_i
            w, v = np.linalg.eigh(h)
            vec = v[:, -1]
            z = vec.conj() @ (m @ vec)
            if abs(z) > tol:
                worst = max(worst, abs(float(np.angle(z))))
        return worst

    def upper_zero(sign: float) -> float:
        # largest theta in (0, pi] with g(sign * theta') >= 0 up to theta
        lo, hi = 0.0, np.pi
        if g(sign * hi) >= 0.0:
            return hi
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if g(sign * mid) >= 0.0:
                lo = mid
            else:
                hi = mid
        return lo

    theta_plus = upper_zero(+1.0)
    theta_minus = upper_zero(-1.0)
    omega = max(np.pi / 2 - theta_plus, np.pi / 2 - theta_minus, 0.0)
    return float(omega)


# ---------------------------------------------------------------------------
# resolvent handles


class ShiftedInverse(LinearMap):
    """Handle for (alpha I + beta Op)^{-1}, reusable per right-hand side.

    Dense LU at desk scale (<= DENSE_CAP unknowns), GMRES above with
    relative residual 1e-10.
    """

    def __init__(self, op: LinearMap, alpha=1.0, beta=1.0, dense_cap=DENSE_CAP):
        self.op = op
        self.alpha, self.beta = complex(alpha), complex(beta)
        self.grid = op.grid
        self.source_dim = self.target_dim = op.source_dim
        self.source_basis = self.target_basis = op.source_basis
        self._k = self.grid.npoints * self.source_dim
        self._lu = None
        self._use_dense = self._k <= dense_cap

    def _factor(self):
        if self._lu is None:
            a = self.alpha * np.eye(self._k) + self.beta * self.op.dense()
            self._lu = sla.lu_factor(a)
        return self._lu

    def apply(self, f: Field) -> Field:
        if self._use_dense:
            sol = sla.lu_solve(self._factor(), f.flat())
            return Field.from_flat(self.grid, sol, self.source_dim,
                                   basis=self.source_basis)
        rhs = f.flat()
        mv = lambda v: (self.alpha * v + self.beta *
                        self.op.apply(Field.from_flat(
                            self.grid, v, self.source_dim)).flat())
        lin = spla.LinearOperator((self._k, self._k), matvec=mv)
        sol, info = spla.gmres(lin, rhs, rtol=1e-10, restart=80, maxiter=400)
        if info != 0:
            res = np.linalg.norm(mv(sol) - rhs) / max(np.linalg.norm(rhs), 1e-300)
            raise RuntimeError(f"resolvent solve did not converge "
                               f"(info={info}, relative residual {res:.2e})")
        return Field.from_flat(self.grid, sol, self.source_dim,
                               basis=self.source_basis)

    def _apply_array_batch(self, batch):
        flat = batch.reshape(-1, batch.shape[-1])
        if self._use_dense:
            sol = sla.lu_solve(self._factor(), flat)
            return sol.reshape(batch.shape)
        cols = [self.apply(Field.from_flat(self.grid, flat[:, i],
                                           self.source_dim)).flat()
                for i in range(flat.shape[1])]
        return np.stack(cols, axis=-1).reshape(batch.shape)


# ---------------------------------------------------------------------------
# the operator T = B1 D1 + D2 B2


@dataclass
class HypothesisReport:
    selfadjoint_defect: float
    nilpotency_defect: float
    range_orthogonality_defect: float
    ellipticity: tuple
    omega1: float
    omega2: float
    failures: list[str] = dc_field(default_factory=list)

    @property
    def omega(self) -> float:
        return max(self.omega1, self.omega2)

    @property
    def passed(self) -> bool:
        return not self.failures


def hypothesis_battery(b1: CoefficientField, d1: MultiplierOperator,
                       d2: MultiplierOperator, b2: CoefficientField,
                       seed=1234, angle_margin: float = 1e-9) -> HypothesisReport:
    """Measure the structural hypotheses and name any failure.

    Checks: self-adjointness of D1, D2; D1 D2 = 0; orthogonality of the
    ranges; partial ellipticity (> 0, vacuous for a zero operator);
    accretivity angles on the discrete subspaces R(D_i) (< pi/2).
    """
    failures = []
    grid = d1.grid
    dim = d1.source_dim

    sa = 0.0
    for d in (d1, d2):
        sa = max(sa, float(np.max(np.abs(
            d.symbol - np.conj(d.symbol.swapaxes(-1, -2))))))
        if not d.selfadjoint:
            failures.append("multiplier not flagged self-adjoint")
    scale = max(float(np.max(np.abs(d1.symbol))),
                float(np.max(np.abs(d2.symbol))), 1.0)
    if sa > 1e-10 * scale:
        failures.append(f"self-adjointness defect {sa:.2e}")

    nil = float(np.max(np.abs(np.einsum(
        "...ij,...jk->...ik", d1.symbol, d2.symbol)))) / scale ** 2
    if nil > 1e-12:
        failures.append(f"D1 D2 = 0 fails ({nil:.2e})")

    p1 = hodge_projections(d1)[0].symbol
    p2 = hodge_projections(d2)[0].symbol
    orth = float(np.max(np.abs(np.einsum("...ij,...jk->...ik", p1, p2))))
    if orth > 1e-10:
        failures.append(f"range orthogonality fails ({orth:.2e})")

    ell = []
    for name, d in (("D1", d1), ("D2", d2)):
        if d.is_zero():
            ell.append((name, None))  # vacuous
            continue
        c = ellipticity_constant(d)
        ell.append((name, c))
        if c <= 0.0:
            failures.append(f"{name} ellipticity constant is zero")

    omegas = []
    for name, d, b in (("B1 on R(D1)", d1, b1), ("B2 on R(D2)", d2, b2)):
        basis = multiplier_range_basis(d)
        omega = accretivity_angle(b, basis)
        omegas.append(omega)
        if omega >= np.pi / 2 - angle_margin:
            failures.append(f"accretivity of {name} fails (angle {omega:.4f})")

    return HypothesisReport(sa / scale, nil, orth, tuple(ell),
                            omegas[0], omegas[1], failures)


class PerturbedDiracOperator(LinearMap):
    """T = B1 D1 + D2 B2 with measured accretivity angles.

    Matrix-free action f -> B1(D1 f) + D2(B2 f); the dense realization
    (when npoints * N <= DENSE_CAP) agrees with it and backs the
    resolvents, spectral projections and semigroups.
    """

    def __init__(self, b1, d1, d2, b2, report: HypothesisReport):
        self.b1, self.d1, self.d2, self.b2 = b1, d1, d2, b2
        self.report = report
        self.grid = d1.grid
        self.source_dim = self.target_dim = d1.source_dim
        self.source_basis = self.target_basis = d1.source_basis
        self.omega1, self.omega2 = report.omega1, report.omega2
        self.omega = report.omega
        self._part1 = None
        self._part2 = None

    def apply(self, f: Field) -> Field:
        return (self.b1.apply(self.d1.apply(f))
                + self.d2.apply(self.b2.apply(f)))

    def _apply_array_batch(self, batch):
        return (self.b1._apply_array_batch(self.d1._apply_array_batch(batch))
                + self.d2._apply_array_batch(self.b2._apply_array_batch(batch)))

    def _build_dense(self):
        return (self.b1.dense() @ self.d1.dense()
                + self.d2.dense() @ self.b2.dense())

    @property
    def part1(self) -> LinearMap:
        """B1 D1 (generator of the first resolvent family)."""
        if self._part1 is None:
            self._part1 = self.b1 @ self.d1
        return self._part1

    @property
    def part2(self) -> LinearMap:
        """D2 B2 (generator of the second resolvent family)."""
        if self._part2 is None:
            self._part2 = self.d2 @ self.b2
        return self._part2

    def resolvent(self, t: float) -> ShiftedInverse:
        """(I + i t T)^{-1}; i/t is off the bisector for real t != 0."""
        if t == 0:
            raise ValueError("t must be nonzero")
        return ShiftedInverse(self, 1.0, 1j * t)

    def lambda_resolvent(self, lam: complex) -> ShiftedInverse:
        """(lambda I - T)^{-1} for lambda off the spectrum."""
        return ShiftedInverse(self, lam, -1.0)

    def adjoint_operator(self) -> "PerturbedDiracOperator":
        """T* = B2* D2 + D1 B1* (swap roles: parts are B2* D2 and D1 B1*)."""
        return assemble_operator(self.b2.adjoint(), self.d2, self.d1,
                                 self.b1.adjoint(), check=False)

    def identity_map(self) -> IdentityMap:
        return IdentityMap(self.grid, self.source_dim, self.source_basis)


def assemble_operator(b1, d1, d2, b2, check: bool = True,
                      seed=1234) -> PerturbedDiracOperator:
    """Assemble T = B1 D1 + D2 B2 after verifying the hypotheses.

    Raises HypothesisError naming the failed check when check=True and
    the battery fails.
    """
    report = hypothesis_battery(b1, d1, d2, b2, seed=seed)
    if check and not report.passed:
        raise HypothesisError("; ".join(report.failures))
    return PerturbedDiracOperator(b1, d1, d2, b2, report)


def diagonal_split_pair_1d(grid: Grid):
    """Canonical n=1, N=2 pair: D1 = -i d/dx diag(1, 0), D2 = -i d/dx diag(0, 1).

    Self-adjoint, D1 D2 = 0, orthogonal ranges, both partially elliptic
    with constant 1.  With independent full-matrix coefficients this is
    genuinely outside the class where D2 B2 B1 D1 = 0.
    """
    if grid.n != 1:
        raise ValueError("this pair is one-dimensional")
    d1 = assemble_multiplier(grid, [np.diag([1.0, 0.0])])
    d2 = assemble_multiplier(grid, [np.diag([0.0, 1.0])])
    return d1, d2


# ---------------------------------------------------------------------------
# adapted splitting (topological, generally non-orthogonal)


def _solve_regularized(m: np.ndarray, rhs: np.ndarray,
                       floor: float = 1e-14) -> np.ndarray:
    """Least-squares solve with Tikhonov floor, for near-degenerate systems."""
    scale = np.linalg.norm(m, 2)
    g = m.conj().T @ m + (floor * scale ** 2) * np.eye(m.shape[0])
    return sla.solve(g, m.conj().T @ rhs, assume_a="pos")


@dataclass(eq=False)
class AdaptedSplitting:
    """Projectors P0, P1, P2 onto N(T)-part, B1 H1 and H2.

    The splitting is topological but generally not orthogonal; the
    splitting constant is the largest projector norm.
    """

    grid: Grid
    fiber_dim: int
    p0: np.ndarray
    p1: np.ndarray
    p2: np.ndarray
    hodge0: np.ndarray
    hodge1: np.ndarray
    hodge2: np.ndarray
    splitting_constant: float
    condition_numbers: tuple

    def projectors(self):
        return self.p0, self.p1, self.p2

    def project(self, which: int, f: Field) -> Field:
        p = (self.p0, self.p1, self.p2)[which]
        return Field.from_flat(self.grid, p @ f.flat(), self.fiber_dim,
                               basis=f.basis)

    def resolution_defect(self) -> float:
        eye = np.eye(self.p0.shape[0])
        return float(np.linalg.norm(self.p0 + self.p1 + self.p2 - eye, 2))

    def idempotence_defect(self) -> float:
        worst = 0.0
        ps = (self.p0, self.p1, self.p2)
        for i, pi in enumerate(ps):
            for j, pj in enumerate(ps):
                target = pi if i == j else 0.0
                worst = max(worst, float(np.linalg.norm(pi @ pj - target, 2)))
        return worst


def build_adapted_splitting(T: PerturbedDiracOperator,
                            cond_limit: float = 1e8) -> AdaptedSplitting:
    """Construct the adapted splitting L2 = H0^{B2} + B1 H1 + H2.

    Q1 projects onto B1 H1 along H0 + H2 (solve the H1-compression of
    B1); Q2 projects onto H2 along B2^{-1}(H0 + H1) (solve the
    H2-compression of B2); then P1 = Q1, P2 = Q2(I - Q1),
    P0 = I - P1 - P2.  Both compressions are invertible exactly by the
    accretivity hypotheses; a condition number beyond cond_limit is
    reported as a splitting failure.
    """
    k = T.grid.npoints * T.source_dim
    if k > DENSE_CAP:
        raise ValueError("adapted splitting uses dense solves; grid too large")
    ph1 = hodge_projections(T.d1)[0]
    ph2 = hodge_projections(T.d2)[0]
    ph1d, ph2d = ph1.dense(), ph2.dense()
    eye = np.eye(k)
    ph0d = eye - ph1d - ph2d

    b1d, b2d = T.b1.dense(), T.b2.dense()
    m1 = ph1d @ b1d @ ph1d + (eye - ph1d)
    m2 = ph2d @ b2d @ ph2d + (eye - ph2d)
    conds = (float(np.linalg.cond(m1, 2)), float(np.linalg.cond(m2, 2)))
    if max(conds) > cond_limit:
        raise SplittingError(
            f"splitting solve condition numbers {conds[0]:.2e}, {conds[1]:.2e} "
            f"exceed {cond_limit:.0e}; accretivity is nearly failing")

    q1 = b1d @ _solve_regularized(m1, ph1d)
    q2 = _solve_regularized(m2, ph2d @ b2d)
    p1 = q1
    p2 = q2 @ (eye - q1)
    p0 = eye - p1 - p2
    const = max(np.linalg.norm(p, 2) for p in (p0, p1, p2))
    return AdaptedSplitting(T.grid, T.source_dim, p0, p1, p2,
                            ph0d, ph1d, ph2d, float(const), conds)


class BlockResolvent(LinearMap):
    """Resolvent of T assembled from the triangular block formula.

    In the adapted splitting the resolvent is
    [[I, 0, 0], [0, R1, 0], [0, (R2 - I) R1, R2]] with
    R1 = (I + i t B1 D1)^{-1}, R2 = (I + i t D2 B2)^{-1}; the total
    action telescopes to P0 f + R2(R1(P1 f) + P2 f).
    """

    def __init__(self, T: PerturbedDiracOperator, splitting: AdaptedSplitting,
                 t: float):
        self.T, self.splitting, self.t = T, splitting, t
        self.grid = T.grid
        self.source_dim = self.target_dim = T.source_dim
        self.source_basis = self.target_basis = T.source_basis
        self.r1 = ShiftedInverse(T.part1, 1.0, 1j * t)
        self.r2 = ShiftedInverse(T.part2, 1.0, 1j * t)

    def apply(self, f: Field) -> Field:
        f0 = self.splitting.project(0, f)
        f1 = self.splitting.project(1, f)
        f2 = self.splitting.project(2, f)
        a = self.r1.apply(f1)
        return f0 + self.r2.apply(a + f2)

    def components(self, f: Field):
        """The block images (u0, u1, u2) in the splitting coordinates."""
        f0 = self.splitting.project(0, f)
        f1 = self.splitting.project(1, f)
        f2 = self.splitting.project(2, f)
        u1 = self.r1.apply(f1)
        u2 = (self.r2.apply(u1) - u1) + self.r2.apply(f2)
        return f0, u1, u2


def block_resolvent(T: PerturbedDiracOperator, splitting: AdaptedSplitting,
                    t: float) -> BlockResolvent:
    return BlockResolvent(T, splitting, t)


# ---------------------------------------------------------------------------
# kernel/range verification


@dataclass
class KernelRangeReport:
    kernel_dim: int
    p0_rank: int
    kernel_in_p0_defect: float
    p0_in_kernel_defect: float
    range_defect: float
    restricted_smin: float

    @property
    def passed(self) -> bool:
        return (self.kernel_dim == self.p0_rank
                and self.kernel_in_p0_defect < 1e-8
                and self.p0_in_kernel_defect < 1e-8
                and self.range_defect < 1e-8
                and self.restricted_smin > 0)


def kernel_range_check(T: PerturbedDiracOperator,
                       splitting: AdaptedSplitting) -> KernelRangeReport:
    """Verify N(T) = range(P0) and closure R(T) = range(P1) + range(P2)."""
    td = T.dense()
    scale = max(np.linalg.norm(td, 2), 1e-300)
    u, s, vh = np.linalg.svd(td)
    small = s < 1e-10 * scale
    kernel = vh.conj().T[:, small]
    kdim = kernel.shape[1]

    p0 = splitting.p0
    p0_rank = int(round(float(np.real(np.trace(p0)))))
    kin = float(np.linalg.norm(kernel - p0 @ kernel, 2)) if kdim else 0.0

    p0_basis = dense_range_basis(_orthogonalize_projector(p0))
    tk = td @ p0_basis
    p0in = float(np.linalg.norm(tk, 2)) / scale if p0_basis.size else 0.0

    # R(T) inside range(P1) + range(P2) = N(P0)
    range_defect = float(np.linalg.norm(p0 @ td, 2)) / scale

    comp = dense_range_basis(_orthogonalize_projector(np.eye(td.shape[0]) - p0))
    if comp.size:
        restricted = td @ comp
        smin = float(np.linalg.svd(restricted, compute_uv=False)[-1])
    else:
        smin = np.inf
    return KernelRangeReport(kdim, p0_rank, kin, p0in, range_defect, smin)


def _orthogonalize_projector(p: np.ndarray) -> np.ndarray:
    """Orthogonal projector with the same range as the (oblique) projector p."""
    q, r = np.linalg.qr(p)
    keep = np.abs(np.diag(r)) > 1e-10 * max(1.0, np.abs(np.diag(r)).max())
    qk = q[:, keep]
    return qk @ qk.conj().T
