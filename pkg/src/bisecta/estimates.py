"""Measured estimates: square functions, non-tangential maximal functions,
dyadic cubes and averages, principal-part/Carleson machinery, off-diagonal
decay, test functions, Poincare and Caccioppoli checks.

Every "<~" of the theory becomes a measured constant here; the
operational meaning of a uniform bound is stability of the measured
number under one grid-refinement doubling (asserted by the acceptance
suite at the stated percentages).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spectral_grid import Field, Grid, LinearMap, MultiplierOperator, hodge_projections
from .operator_core import (
    CoefficientField,
    PerturbedDiracOperator,
    ShiftedInverse,
    assemble_operator,
)
from .functional_calculus import resolvent_family

__all__ = [
    "TGrid",
    "DyadicCube",
    "WhitneyParams",
    "level_for_scale",
    "cubes_at_level",
    "annulus_mask",
    "annuli_cover_exponent",
    "dyadic_average",
    "hardy_littlewood_dyadic",
    "square_function",
    "SquareFunctionResult",
    "reverse_square_function_check",
    "nontangential_maximal",
    "aux_maximal",
    "slab_l2_sup",
    "PrincipalPartAnalysis",
    "offdiagonal_decay",
    "mask_distance",
    "test_function",
    "TestFunctionResult",
    "carleson_box",
    "poincare_check",
    "caccioppoli_check",
    "bump_profile",
]


# ---------------------------------------------------------------------------
# scale grid


@dataclass(frozen=True, eq=False)
class TGrid:
    """Logarithmically spaced scales with weights for integrals dt/t.

    Trapezoidal rule in log t on the stored nodes, so the weights sum to
    log(t_M / t_1) exactly.
    """

    ts: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        ts = np.asarray(self.ts, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if ts.ndim != 1 or np.any(np.diff(ts) <= 0):
            raise ValueError("scales must be strictly increasing")
        object.__setattr__(self, "ts", ts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def logspaced(cls, tmin: float, tmax: float, per_octave: int = 12) -> "TGrid":
        octaves = np.log2(tmax / tmin)
        count = max(int(np.ceil(octaves * per_octave)) + 1, 2)
        logt = np.linspace(np.log(tmin), np.log(tmax), count)
        ts = np.exp(logt)
        step = logt[1] - logt[0]
        w = np.full(count, step)
        w[0] *= 0.5
        w[-1] *= 0.5
        return cls(ts, w)

    @classmethod
    def default_for(cls, grid: Grid, per_octave: int = 12) -> "TGrid":
        """Resolved-scale window: t in [0.1 L/(2m), 4 L]."""
        return cls.logspaced(0.1 * grid.L / (2 * grid.m), 4.0 * grid.L,
                             per_octave)

    def restrict(self, tmin: float = 0.0, tmax: float = np.inf) -> "TGrid":
        keep = (self.ts >= tmin) & (self.ts <= tmax)
        if not np.any(keep):
            raise ValueError("restriction leaves no scales")
        return TGrid(self.ts[keep], self.weights[keep])

    def integrate_dt_over_t(self, values) -> float:
        """Quadrature of integral values(t) dt/t over the node range."""
        return float(np.real(np.sum(self.weights * np.asarray(values))))

    def linear_weights(self) -> np.ndarray:
        """Weights for integrals dt (not dt/t)."""
        return self.weights * self.ts


# ---------------------------------------------------------------------------
# dyadic cubes and annuli (integer half-index arithmetic: exact on the torus)


def level_for_scale(t: float, grid: Grid, clamp: bool = False) -> int:
    """Level j with 2^{-j-1} < t/L <= 2^{-j} (side lengths 2^{-j} L)."""
    jmax = int(np.log2(grid.m))
    q = np.log2(grid.L / t)
    j = int(np.floor(q + 1e-12))
    if j < 0:
        if clamp:
            return 0
        raise ValueError(f"scale t={t:g} above the torus period")
    if j > jmax:
        if clamp:
            return jmax
        raise ValueError(f"scale t={t:g} below the grid resolution")
    return j


@dataclass(frozen=True, eq=False)
class DyadicCube:
    """Dyadic cube of side 2^{-level} L anchored at the torus origin grid."""

    grid: Grid
    level: int
    corner: tuple

    @property
    def side_points(self) -> int:
        return self.grid.m >> self.level

    @property
    def side_length(self) -> float:
        return self.grid.L * 2.0 ** (-self.level)

    @property
    def measure(self) -> float:
        return self.side_length ** self.grid.n

    def center(self) -> tuple:
        s = self.side_points
        return tuple((c * s + s / 2.0) * self.grid.spacing for c in self.corner)

    def mask(self) -> np.ndarray:
        out = np.zeros(self.grid.shape, dtype=bool)
        s = self.side_points
        slices = tuple(slice(c * s, (c + 1) * s) for c in self.corner)
        out[slices] = True
        return out

    def slices(self):
        s = self.side_points
        return tuple(slice(c * s, (c + 1) * s) for c in self.corner)


def cubes_at_level(grid: Grid, level: int):
    if level < 0 or (grid.m >> level) < 1:
        raise ValueError("level outside representable range")
    count = 1 << level
    if grid.n == 1:
        return [DyadicCube(grid, level, (c,)) for c in range(count)]
    return [DyadicCube(grid, level, (c1, c2))
            for c1 in range(count) for c2 in range(count)]


def _halfindex_offsets(grid: Grid, cube: DyadicCube):
    """Wrapped signed offsets (in half-grid units) of every grid point from
    the cube center, per axis.  Integer arithmetic, hence tie-free."""
    m2 = 2 * grid.m
    s = cube.side_points
    outs = []
    for axis, c in enumerate(cube.corner):
        c2 = 2 * c * s + s  # center in half-units
        idx2 = 2 * np.arange(grid.m)
        delta = (idx2 - c2 + m2 // 2) % m2 - m2 // 2
        outs.append(delta)
    return outs


def _scaled_cube_mask(cube: DyadicCube, factor: int) -> np.ndarray:
    """Mask of factor*Q (same center, side factor * l(Q)), half-open per axis."""
    grid = cube.grid
    half_side2 = factor * cube.side_points  # half-units of a*l/2
    deltas = _halfindex_offsets(grid, cube)
    axes_in = [(-half_side2 <= d) & (d < half_side2) for d in deltas]
    if grid.n == 1:
        return axes_in[0]
    return axes_in[0][:, None] & axes_in[1][None, :]


def annulus_mask(cube: DyadicCube, k: int) -> np.ndarray:
    """Dyadic annulus A_0 = Q, A_k = (2^k Q) \\ (2^{k-1} Q), with periodic
    wrap-around; empty once 2^{k-1} Q already covers the torus."""
    if k == 0:
        return cube.mask()
    outer = _scaled_cube_mask(cube, 1 << k)
    inner = _scaled_cube_mask(cube, 1 << (k - 1))
    return outer & ~inner


def annuli_cover_exponent(cube: DyadicCube) -> int:
    """Smallest K with 2^K Q covering the torus."""
    k = 0
    while (1 << k) * cube.side_points < cube.grid.m:
        k += 1
    return k


def dyadic_average(f: Field, t: float, clamp: bool = True) -> Field:
    """Piecewise-constant dyadic averaging at the level selected by t.

    Idempotent at fixed t, self-adjoint, exact on cube-aligned modes.
    Scales above the period average over the whole torus (level 0).
    """
    grid = f.grid
    j = level_for_scale(t, grid, clamp=clamp)
    vals = f.physical
    s = grid.m >> j
    c = 1 << j
    if grid.n == 1:
        avg = vals.reshape(c, s, f.fiber_dim).mean(axis=1)
        out = np.repeat(avg, s, axis=0)
    else:
        avg = vals.reshape(c, s, c, s, f.fiber_dim).mean(axis=(1, 3))
        out = np.repeat(np.repeat(avg, s, axis=0), s, axis=1)
    return Field.from_physical(grid, out, basis=f.basis)


def hardy_littlewood_dyadic(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Dyadic Hardy-Littlewood maximal function: max over dyadic levels of
    the cube averages of |values|."""
    mags = np.abs(values)
    out = np.zeros(grid.shape)
    jmax = int(np.log2(grid.m))
    for j in range(jmax + 1):
        s = grid.m >> j
        c = 1 << j
        if grid.n == 1:
            avg = mags.reshape(c, s).mean(axis=1)
            lvl = np.repeat(avg, s, axis=0)
        else:
            avg = mags.reshape(c, s, c, s).mean(axis=(1, 3))
            lvl = np.repeat(np.repeat(avg, s, axis=0), s, axis=1)
        out = np.maximum(out, lvl)
    return out


# ---------------------------------------------------------------------------
# square functions


@dataclass
class SquareFunctionResult:
    value: float          # quadrature of ||psi(tT)f||^2 dt/t
    norm_sq: float        # ||f||^2
    per_scale: np.ndarray

    @property
    def ratio(self) -> float:
        return self.value / self.norm_sq if self.norm_sq > 0 else 0.0


def square_function(apply_at, f: Field, tgrid: TGrid) -> SquareFunctionResult:
    """Quadrature sum_j w_j ||psi(t_j T) f||^2 for a caller-supplied
    evaluation rule apply_at(t) -> Field."""
    per_scale = np.array([apply_at(t).norm() ** 2 for t in tgrid.ts])
    total = tgrid.integrate_dt_over_t(per_scale)
    return SquareFunctionResult(total, f.norm() ** 2, per_scale)


@dataclass
class ReverseCheckResult:
    lower: float
    upper: float
    probe_ratios: np.ndarray
    certified_lower: float | None
    dual_forward_upper: float | None


def reverse_square_function_check(calc, symbol, tgrid: TGrid,
                                  range_projector: np.ndarray,
                                  probes: list[Field],
                                  certified: bool = True,
                                  dual: bool = True) -> ReverseCheckResult:
    """Lower/upper square-function ratio bounds over a probe family in
    closure R(T), an exact subspace bound via the quadrature form, and a
    duality cross-check (forward estimate for the adjoint)."""
    T = calc.T
    ratios = []
    for f in probes:
        pf = Field.from_flat(T.grid, range_projector @ f.flat(), T.source_dim,
                             basis=f.basis)
        if pf.norm() < 1e-12 * max(f.norm(), 1e-300):
            continue
        res = square_function(lambda t: calc.apply(symbol, t, pf), pf, tgrid)
        ratios.append(res.ratio)
    ratios = np.array(ratios)

    certified_lower = None
    if certified:
        k = range_projector.shape[0]
        g = np.zeros((k, k), dtype=np.complex128)
        for t, w in zip(tgrid.ts, tgrid.weights):
            mat = calc.symbol_matrix(symbol, t)
            g += w * (mat.conj().T @ mat)
        from .operator_core import dense_range_basis, _orthogonalize_projector
        basis = dense_range_basis(_orthogonalize_projector(range_projector))
        if basis.size:
            comp = basis.conj().T @ g @ basis
            certified_lower = float(np.linalg.eigvalsh(
                (comp + comp.conj().T) / 2)[0])

    dual_upper = None
    if dual:
        from .functional_calculus import Calculus
        Tst = T.adjoint_operator()
        calc_st = Calculus(Tst)
        dual_sym = symbol.conjugate_dual()
        dual_ratios = []
        for f in probes[: max(1, len(probes) // 2)]:
            pf = Field.from_flat(Tst.grid,
                                 calc_st.kernel_projector @ f.flat(),
                                 Tst.source_dim, basis=f.basis)
            pf = f - pf
            if pf.norm() < 1e-12:
                continue
            res = square_function(lambda t: calc_st.apply(dual_sym, t, pf),
                                  pf, tgrid)
            dual_ratios.append(res.ratio)
        if dual_ratios:
            dual_upper = float(np.max(dual_ratios))

    return ReverseCheckResult(float(ratios.min()), float(ratios.max()),
                              ratios, certified_lower, dual_upper)


# ---------------------------------------------------------------------------
# non-tangential maximal functions


@dataclass(frozen=True)
class WhitneyParams:
    """Whitney region W(t, x) = B(x, ball_factor t) x (slab[0] t, slab[1] t)."""

    ball_factor: float = 1.0
    slab: tuple = (0.5, 2.0)


WHITNEY_STANDARD = WhitneyParams(1.0, (0.5, 2.0))
WHITNEY_NARROW = WhitneyParams(1.0, (0.5, 1.0))       # the section-5 convention
WHITNEY_ENLARGED = WhitneyParams(2.0, (0.25, 2.0))


def _wrapped_distance_grid(grid: Grid) -> np.ndarray:
    """Geodesic distance of every grid point from the origin."""
    x1 = np.arange(grid.m) * grid.spacing
    d1 = np.minimum(x1, grid.L - x1)
    if grid.n == 1:
        return d1
    return np.sqrt(d1[:, None] ** 2 + d1[None, :] ** 2)


def _ball_kernel_hat(grid: Grid, radius: float) -> tuple[np.ndarray, int]:
    dist = _wrapped_distance_grid(grid)
    kern = (dist <= radius).astype(float)
    count = int(kern.sum())
    return np.fft.fftn(kern), count


def _ball_sums(density_hat: np.ndarray, kern_hat: np.ndarray,
               axes: tuple) -> np.ndarray:
    conv = np.fft.ifftn(density_hat * kern_hat, axes=axes)
    return np.maximum(conv.real, 0.0)


def nontangential_maximal(samples: np.ndarray, grid: Grid, tgrid: TGrid,
                          params: WhitneyParams = WHITNEY_STANDARD):
    """Whitney-averaged maximal function of half-space samples.

    samples: (M, *grid.shape, fiber); entry j is the slice at scale
    tgrid.ts[j].  For each boundary point x the sup over sampled scales t
    of the L2 average of |u|^2 over B(x, t) x (t/2, 2t) is returned
    (square root taken).  Averages use quadrature weights normalized
    over the sampled region, so constants are reproduced exactly.
    Returns (values array over the grid, list of scales with empty
    slabs).
    """
    ts = tgrid.ts
    wlin = tgrid.linear_weights()
    density = np.sum(np.abs(samples) ** 2, axis=-1)  # (M, *grid)
    axes = tuple(range(1, 1 + grid.n))
    density_hat = np.fft.fftn(density, axes=axes)
    best = np.zeros(grid.shape)
    empty = []
    spatial_axes = tuple(range(grid.n))
    for j, t in enumerate(ts):
        lo, hi = params.slab[0] * t, params.slab[1] * t
        in_slab = (ts > lo) & (ts < hi)
        in_slab[j] = True  # the center scale always participates
        if not np.any(in_slab):
            empty.append(t)
            continue
        kern_hat, count = _ball_kernel_hat(grid, params.ball_factor * t)
        num = np.zeros(grid.shape)
        den = 0.0
        for k in np.nonzero(in_slab)[0]:
            conv = np.fft.ifftn(density_hat[k] * kern_hat,
                                axes=spatial_axes).real
            num += wlin[k] * conv
            den += wlin[k] * count
        best = np.maximum(best, num / den)
    return np.sqrt(np.maximum(best, 0.0)), empty


def maximal_l2_norm(values: np.ndarray, grid: Grid) -> float:
    return float(np.sqrt(grid.cell_measure * np.sum(values ** 2)))


def aux_maximal(samples: np.ndarray, grid: Grid, tgrid: TGrid, k: int):
    """Widened-cone maximal function with the displayed normalization

        sup_t ( 2^{-kn} t^{-(1+n)} int_{B(x, 2^k t) x (t/2, t]} |u|^2 )^{1/2}.

    Unlike nontangential_maximal this is a plain normalized integral,
    not an average over the sampled region.
    """
    ts = tgrid.ts
    wlin = tgrid.linear_weights()
    density = np.sum(np.abs(samples) ** 2, axis=-1)
    spatial_axes = tuple(range(grid.n))
    density_hat = np.fft.fftn(density, axes=tuple(range(1, 1 + grid.n)))
    best = np.zeros(grid.shape)
    empty = []
    scale = 2.0 ** (-k * grid.n)
    for j, t in enumerate(ts):
        in_slab = (ts > 0.5 * t) & (ts <= t)
        if not np.any(in_slab):
            empty.append(t)
            continue
        kern_hat, _ = _ball_kernel_hat(grid, (2.0 ** k) * t)
        num = np.zeros(grid.shape)
        for idx in np.nonzero(in_slab)[0]:
            conv = np.fft.ifftn(density_hat[idx] * kern_hat,
                                axes=spatial_axes).real
            num += wlin[idx] * conv * grid.cell_measure
        best = np.maximum(best, scale * t ** (-(1 + grid.n)) * num)
    return np.sqrt(np.maximum(best, 0.0)), empty


def slab_l2_sup(samples: np.ndarray, grid: Grid, tgrid: TGrid) -> float:
    """sup_t t^{-1} int_t^{2t} ||u_s||_2^2 ds over the sampled scales."""
    ts = tgrid.ts
    wlin = tgrid.linear_weights()
    norms_sq = grid.cell_measure * np.sum(
        np.abs(samples) ** 2, axis=tuple(range(1, samples.ndim)))
    best = 0.0
    for t in ts:
        in_slab = (ts > t) & (ts < 2.0 * t)
        if not np.any(in_slab):
            continue
        best = max(best, float(np.sum(wlin[in_slab] * norms_sq[in_slab]) / t))
    return best


# ---------------------------------------------------------------------------
# principal part, Carleson machinery


class PrincipalPartAnalysis:
    """The localized family Theta_t = Q_t^2 R_t^1 B_1 and its principal
    (multiplication) part gamma_t = Theta_t applied to constants.

    Carries caches of the per-scale resolvent factorizations; all
    handles are reusable across right-hand sides.
    """

    def __init__(self, T: PerturbedDiracOperator):
        self.T = T
        self.grid = T.grid
        self.dim = T.source_dim
        self._family_cache: dict = {}

    def operator_at(self, t: float) -> LinearMap:
        """Theta_t = Q_t^2 R_t^1 B_1."""
        handle = self._family_cache.get(t)
        if handle is None:
            q2 = resolvent_family(self.T.part2, t).q
            r1 = ShiftedInverse(self.T.part1, 1.0, 1j * t)
            handle = q2 @ r1 @ self.T.b1
            self._family_cache[t] = handle
        return handle

    def principal_part_at(self, t: float) -> np.ndarray:
        """gamma_t as a pointwise matrix field (*grid, N, N): column v is
        Theta_t applied to the constant field v (the annuli sum telescopes
        to this on the torus)."""
        op = self.operator_at(t)
        cols = np.eye(self.dim, dtype=np.complex128)
        batch = np.broadcast_to(cols, self.grid.shape + (self.dim, self.dim)).copy()
        out = op._apply_array_batch(batch)
        return out

    def principal_part_annuli(self, t: float, cube: DyadicCube) -> np.ndarray:
        """gamma_t built from the literal annuli sum around one cube
        (finite on the torus); equals principal_part_at up to rounding."""
        op = self.operator_at(t)
        total = np.zeros(self.grid.shape + (self.dim, self.dim),
                         dtype=np.complex128)
        kmax = annuli_cover_exponent(cube)
        for k in range(kmax + 1):
            mask = annulus_mask(cube, k).astype(float)
            batch = (mask[..., None, None] *
                     np.eye(self.dim)).astype(np.complex128)
            total += op._apply_array_batch(batch)
        return total

    def estimate_sup_over_cubes(self, t: float) -> float:
        """sup over Q in D_t of ||gamma_t||_{L2(Q)} / |Q|^{1/2} (Frobenius
        pointwise); a uniform bound on this is the measured estimate of
        the principal part."""
        gamma = self.principal_part_at(t)
        dens = np.sum(np.abs(gamma) ** 2, axis=(-2, -1))
        level = level_for_scale(t, self.grid, clamp=True)
        worst = 0.0
        for cube in cubes_at_level(self.grid, level):
            loc = float(np.sum(dens[cube.slices()]) * self.grid.cell_measure)
            worst = max(worst, np.sqrt(loc / cube.measure))
        return worst

    def carleson_box(self, tgrid: TGrid, cube: DyadicCube,
                     gamma_by_scale: dict | None = None) -> float:
        """(1/|Q|) int_0^{l(Q)} int_Q |gamma_t|^2 dx dt/t over the sampled
        scales below the side length."""
        sub = tgrid.restrict(tmax=cube.side_length)
        total = 0.0
        for t, w in zip(sub.ts, sub.weights):
            gamma = (gamma_by_scale or {}).get(t)
            if gamma is None:
                gamma = self.principal_part_at(t)
                if gamma_by_scale is not None:
                    gamma_by_scale[t] = gamma
            dens = np.sum(np.abs(gamma) ** 2, axis=(-2, -1))
            total += w * float(np.sum(dens[cube.slices()])
                               * self.grid.cell_measure)
        return total / cube.measure

    def carleson_norm(self, tgrid: TGrid, max_level: int | None = None) -> float:
        """sup over dyadic cubes of the normalized box integral."""
        jmax = int(np.log2(self.grid.m)) if max_level is None else max_level
        cache: dict = {}
        worst = 0.0
        for j in range(jmax + 1):
            for cube in cubes_at_level(self.grid, j):
                if cube.side_length <= tgrid.ts[0]:
                    continue
                worst = max(worst, self.carleson_box(tgrid, cube, cache))
        return worst

    def residual_square_function(self, f: Field, tgrid: TGrid,
                                 diagnostics: bool = False):
        """Quadrature of ||Theta_t f - gamma_t E_t f||^2 dt/t relative to
        ||f||^2, for f in closure R(D1) (projected if not).

        With diagnostics=True also returns the three-term split
        I = Theta_t (I - P_t) f, II = (Theta_t - gamma_t E_t) P_t f,
        III = gamma_t E_t (P_t - I) f built from the unperturbed
        P_t = (I + t^2 D1^2)^{-1}.
        """
        ph1 = hodge_projections(self.T.d1)[0]
        pf = ph1.apply(f)
        per_scale = np.zeros(len(tgrid.ts))
        diag = {"I": np.zeros(len(tgrid.ts)), "II": np.zeros(len(tgrid.ts)),
                "III": np.zeros(len(tgrid.ts))} if diagnostics else None
        for j, t in enumerate(tgrid.ts):
            theta_f = self.operator_at(t).apply(pf)
            gamma = self.principal_part_at(t)
            etf = dyadic_average(pf, t)
            gef = np.einsum("...ij,...j->...i", gamma, etf.physical)
            resid = theta_f.physical - gef
            per_scale[j] = (np.sum(np.abs(resid) ** 2)
                            * self.grid.cell_measure)
            if diagnostics:
                p_unpert = ShiftedInverse(
                    _squared_map(self.T.d1), 1.0, t * t)
                ptf = p_unpert.apply(pf)
                term1 = self.operator_at(t).apply(pf - ptf)
                ept = dyadic_average(ptf, t)
                term2 = (self.operator_at(t).apply(ptf).physical
                         - np.einsum("...ij,...j->...i", gamma, ept.physical))
                term3 = np.einsum("...ij,...j->...i", gamma,
                                  (ept - dyadic_average(pf, t)).physical)
                diag["I"][j] = term1.norm() ** 2
                diag["II"][j] = (np.sum(np.abs(term2) ** 2)
                                 * self.grid.cell_measure)
                diag["III"][j] = (np.sum(np.abs(term3) ** 2)
                                  * self.grid.cell_measure)
        total = tgrid.integrate_dt_over_t(per_scale)
        norm_sq = pf.norm() ** 2
        result = SquareFunctionResult(total, norm_sq, per_scale)
        return (result, diag) if diagnostics else result


class _squared_map(LinearMap):
    """A^2 for a multiplier or general map (helper for P_t = (I + t^2 A^2)^{-1})."""

    def __init__(self, op: LinearMap):
        self.op = op
        self.grid = op.grid
        self.source_dim = self.target_dim = op.source_dim
        self.source_basis = self.target_basis = op.source_basis

    def apply(self, f: Field) -> Field:
        return self.op.apply(self.op.apply(f))

    def _apply_array_batch(self, batch):
        return self.op._apply_array_batch(self.op._apply_array_batch(batch))


# ---------------------------------------------------------------------------
# off-diagonal decay


def mask_distance(grid: Grid, e_mask: np.ndarray, f_mask: np.ndarray) -> float:
    """Geodesic (wrapped) distance between two grid-point sets."""
    pts = np.argwhere if grid.n == 2 else (lambda m: np.nonzero(m)[0][:, None])
    ei = pts(e_mask)
    fi = pts(f_mask)
    if ei.size == 0 or fi.size == 0:
        raise ValueError("masks must be nonempty")
    diff = np.abs(ei[:, None, :] - fi[None, :, :]).astype(float)
    diff = np.minimum(diff, grid.m - diff) * grid.spacing
    dist = np.sqrt(np.sum(diff ** 2, axis=-1))
    return float(dist.min())


@dataclass
class OffDiagonalReport:
    ts: np.ndarray
    norms: np.ndarray
    distance: float
    exponent: float
    window: np.ndarray  # mask of scales used in the fit


def offdiagonal_decay(family_at, e_mask: np.ndarray, f_mask: np.ndarray,
                      grid: Grid, ts, fiber_dim: int, probe: str = "svd",
                      n_probes: int = 5, seed: int = 0,
                      floor: float = 1e-12) -> OffDiagonalReport:
    """Measured localization: sup over f supported in E of
    ||op_t f||_{L2(F)} / ||f||_2, swept over scales, with the decay
    exponent fitted by regressing log norm against log(t / dist(E, F)).

    probe="svd" computes the exact sup as the largest singular value of
    the masked dense block; probe="random" uses random supported fields.
    """
    if np.any(e_mask & f_mask):
        raise ValueError("masks overlap")
    dist = mask_distance(grid, e_mask, f_mask)
    if dist <= 0:
        raise ValueError("masks must be separated")
    e_flat = np.repeat(e_mask.reshape(-1), fiber_dim)
    f_flat = np.repeat(f_mask.reshape(-1), fiber_dim)
    ts = np.asarray(ts, dtype=float)
    norms = np.zeros(len(ts))
    rng = np.random.default_rng(seed)
    for i, t in enumerate(ts):
        op = family_at(t)
        if probe == "svd":
            sub = op.dense()[np.ix_(f_flat, e_flat)]
            norms[i] = float(np.linalg.norm(sub, 2)) if sub.size else 0.0
        else:
            best = 0.0
            for _ in range(n_probes):
                vec = np.zeros(e_flat.size, dtype=np.complex128)
                vec[e_flat] = (rng.standard_normal(int(e_flat.sum()))
                               + 1j * rng.standard_normal(int(e_flat.sum())))
                fld = Field.from_flat(grid, vec, fiber_dim)
                img = op.apply(fld).flat()
                best = max(best, np.linalg.norm(img[f_flat])
                           / np.linalg.norm(vec))
            norms[i] = best
    window = norms > floor
    if window.sum() >= 2:
        x = np.log(ts[window] / dist)
        y = np.log(norms[window])
        exponent = float(np.polyfit(x, y, 1)[0])
    else:
        exponent = np.inf  # decayed below the floor everywhere
    return OffDiagonalReport(ts, norms, dist, exponent, window)


# ---------------------------------------------------------------------------
# test functions (the paraaccretivity input of the Carleson argument)


def bump_profile(delta_over_l: np.ndarray) -> np.ndarray:
    """Raised-cosine collar profile: 1 for |u| <= 1, 0 for |u| >= 1.5,
    cos^2 ramp between (u = offset from cube center in units of l(Q))."""
    u = np.abs(delta_over_l)
    ramp = np.cos(np.pi * (u - 1.0)) ** 2
    return np.where(u <= 1.0, 1.0, np.where(u >= 1.5, 0.0, ramp))


def cutoff_field(cube: DyadicCube, v: np.ndarray) -> Field:
    """eta_Q v: 1 on 2Q, supported in 3Q, tensor raised-cosine collar."""
    grid = cube.grid
    if 3 * cube.side_points > grid.m:
        raise ValueError("3Q does not fit the torus without self-overlap")
    deltas = _halfindex_offsets(grid, cube)
    # half-units -> units of l(Q): l(Q) = side_points grid steps = 2*side half-units
    profs = [bump_profile(d / (2.0 * cube.side_points)) for d in deltas]
    eta = profs[0] if grid.n == 1 else profs[0][:, None] * profs[1][None, :]
    vals = eta[..., None] * np.asarray(v, dtype=np.complex128)
    return Field.from_physical(grid, vals)


@dataclass
class TestFunctionResult:
    field: Field
    epsilon: float
    halvings: int
    accretivity: float        # Re (v, avg_Q f)  (target >= 1/2)
    deviation: float          # |avg_Q f - v|
    correction_range_defect: float

    @property
    def accretive(self) -> bool:
        return self.accretivity >= 0.5


def test_function(T: PerturbedDiracOperator, cube: DyadicCube, v: np.ndarray,
                  epsilon: float = 0.1, max_halvings: int = 20) -> TestFunctionResult:
    """f_Q^v = (I + (eps l(Q) D1 B1)^2)^{-1}(eta_Q v), with eps halved
    until the accretivity condition Re(v, avg_Q f) >= 1/2 holds.

    Raises when the cap of 20 halvings is exhausted (accretivity
    hypothesis failure).  The deviation |avg_Q f - v| is reported for
    the sqrt(eps) comparison, and the correction f - eta_Q v is checked
    to lie in closure R(D1).
    """
    grid = cube.grid
    eta_v = cutoff_field(cube, v)
    d1b1 = T.d1 @ T.b1
    ph1 = hodge_projections(T.d1)[0]
    eps = float(epsilon)
    for halvings in range(max_halvings + 1):
        s = eps * cube.side_length
        op = ShiftedInverse(_squared_map(d1b1), 1.0, s * s)
        f = op.apply(eta_v)
        sel = cube.slices()
        avg = (np.sum(f.physical[sel].reshape(-1, T.source_dim), axis=0)
               * grid.cell_measure / cube.measure)
        accr = float(np.real(np.sum(np.asarray(v) * np.conj(avg))))
        # conjugate-linear slot carries avg; Re is convention-independent
        deviation = float(np.linalg.norm(avg - np.asarray(v)))
        if accr >= 0.5:
            corr = f - eta_v
            defect = (ph1.apply(corr) - corr).norm() / max(corr.norm(), 1e-300)
            return TestFunctionResult(f, eps, halvings, accr, deviation,
                                      float(defect))
        eps *= 0.5
    raise RuntimeError(
        f"test-function accretivity not achieved within {max_halvings} "
        f"halvings (last Re = {accr:.3f}); accretivity hypothesis fails")


def carleson_box(values_by_scale, tgrid: TGrid, cube: DyadicCube,
                 grid: Grid) -> float:
    """(1/|Q|) int_0^{l(Q)} int_Q |g_t(x)|^2 dx dt/t for a caller-supplied
    family values_by_scale(t) -> (*grid,) nonnegative density."""
    sub = tgrid.restrict(tmax=cube.side_length)
    total = 0.0
    for t, w in zip(sub.ts, sub.weights):
        dens = values_by_scale(t)
        total += w * float(np.sum(dens[cube.slices()]) * grid.cell_measure)
    return total / cube.measure


# ---------------------------------------------------------------------------
# Sobolev-Poincare check


def _validate_poincare_exponents(n: int, p: float, q: float):
    if q < 1 or p < 1:
        raise ValueError("exponents must be >= 1")
    if n == 1:
        return 1.0  # r = n = 1, r* = infinity
    # need r in (1, n) with r <= p and q <= r* = nr/(n-r)
    r_low = max(1.0, n * q / (n + q))
    r_high = min(float(p), n - 1e-9)
    if r_low >= r_high:
        raise ValueError(
            f"no admissible Sobolev exponent r for n={n}, p={p}, q={q}")
    return 0.5 * (r_low + r_high)


def poincare_check(u_values: np.ndarray, grid: Grid, omega_mask: np.ndarray,
                   s_mask: np.ndarray, p: float, q: float,
                   grad: np.ndarray | None = None) -> float:
    """Measured ratio of the Sobolev-Poincare inequality

        ||u - u_S||_{L_q(Omega)} <= C |Omega|^{1/q - 1/p + 1/n} R^n |S|^{-1}
                                      ||grad u||_{L_p(Omega)}

    without the constant.  grad defaults to the spectral gradient of u
    (shape (*grid, n) when supplied).
    """
    _validate_poincare_exponents(grid.n, p, q)
    if not np.all(omega_mask[s_mask]):
        raise ValueError("S must be a subset of Omega")
    u = np.asarray(u_values)
    h = grid.cell_measure
    u_s = np.sum(u[s_mask]) * h / (np.sum(s_mask) * h)
    dev = np.abs(u - u_s)
    lhs = (np.sum(dev[omega_mask] ** q) * h) ** (1.0 / q)

    if grad is None:
        freq = np.fft.fftn(u.astype(np.complex128))
        grads = []
        for xi in grid.frequencies():
            grads.append(np.fft.ifftn(1j * xi * freq))
        grad = np.stack(grads, axis=-1)
    gmag = np.sqrt(np.sum(np.abs(grad) ** 2, axis=-1))
    if np.isinf(p):
        gnorm = float(np.max(gmag[omega_mask]))
    else:
        gnorm = (np.sum(gmag[omega_mask] ** p) * h) ** (1.0 / p)

    measure_omega = float(np.sum(omega_mask) * h)
    measure_s = float(np.sum(s_mask) * h)
    pts = np.argwhere(omega_mask) if grid.n == 2 \
        else np.nonzero(omega_mask)[0][:, None]
    diff = np.abs(pts[:, None, :] - pts[None, :, :]).astype(float)
    diff = np.minimum(diff, grid.m - diff) * grid.spacing
    diameter = float(np.sqrt(np.sum(diff ** 2, axis=-1)).max())

    inv_p = 0.0 if np.isinf(p) else 1.0 / p
    rhs = (measure_omega ** (1.0 / q - inv_p + 1.0 / grid.n)
           * diameter ** grid.n / measure_s * gnorm)
    if rhs == 0.0:
        return 0.0 if lhs == 0.0 else np.inf
    return float(lhs / rhs)


# ---------------------------------------------------------------------------
# Caccioppoli check for dv/dt + B D v = 0


def _mollifier(u: np.ndarray) -> np.ndarray:
    """C-infinity bump exp(1 - 1/(1-u^2)) on |u| < 1, 0 outside."""
    out = np.zeros_like(u)
    inside = np.abs(u) < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - u[inside] ** 2))
    return out


def _mollifier_derivative(u: np.ndarray) -> np.ndarray:
    out = np.zeros_like(u)
    inside = np.abs(u) < 1.0
    ui = u[inside]
    out[inside] = (np.exp(1.0 - 1.0 / (1.0 - ui ** 2))
                   * (-2.0 * ui / (1.0 - ui ** 2) ** 2))
    return out


@dataclass
class CaccioppoliResult:
    lhs: float              # integral |Dv|^2 eta^2
    rhs: float              # integral |v|^2 |grad eta|^2
    equation_residual: float

    @property
    def ratio(self) -> float:
        return self.lhs / self.rhs if self.rhs > 0 else np.inf


def caccioppoli_check(B: CoefficientField, D: MultiplierOperator, v0: Field,
                      t_center: float, n_tslices: int = 201,
                      residual_tol: float = 1e-6) -> CaccioppoliResult:
    """Interior control for semigroup solutions of dv/dt + BDv = 0.

    v is generated by the semigroup of BD from the chi+ part of v0 and
    sampled on a uniform t-grid covering the bump support
    (t_center/4, 2 t_center); eta is a C-infinity product bump in (t, x).
    The equation residual (fourth-order centered t-stencils against
    -BDv) is reported and must stay below residual_tol for the check to
    be meaningful; it is raised otherwise.
    """
    from .functional_calculus import spectral_decomposition

    grid = D.grid
    dim = D.source_dim
    zero_sym = np.zeros(grid.shape + (dim, dim), dtype=np.complex128)
    d_zero = MultiplierOperator(grid, zero_sym, selfadjoint=True)
    T = assemble_operator(B, D, d_zero, CoefficientField.identity(grid, dim),
                          check=False)
    dec = spectral_decomposition(T)

    t_lo, t_hi = t_center / 4.0, 2.0 * t_center
    ts = np.linspace(t_lo, t_hi, n_tslices)
    dt = ts[1] - ts[0]
    v0p = dec.function_matrix(dec.plus_mask.astype(np.complex128)) @ v0.flat()
    slices = np.stack([
        (dec.semigroup_matrix(t) @ v0p).reshape(grid.shape + (dim,))
        for t in ts])
    d_slices = np.stack([
        D.apply(Field.from_physical(grid, slices[j])).physical
        for j in range(len(ts))])

    # fourth-order residual on interior slices
    coeffs = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / (12.0 * dt)
    interior_idx = range(2, len(ts) - 2)
    res_num = 0.0
    res_den = 0.0
    for j in interior_idx:
        dv_dt = sum(c * slices[j + o] for o, c in zip(range(-2, 3), coeffs))
        bdv = B._apply_array_batch(d_slices[j][..., None])[..., 0]
        res_num += np.sum(np.abs(dv_dt + bdv) ** 2)
        res_den += np.sum(np.abs(slices[j]) ** 2) / t_center ** 2
    residual = float(np.sqrt(res_num / max(res_den, 1e-300)))
    if residual > residual_tol:
        raise RuntimeError(
            f"semigroup slices violate the equation (residual {residual:.2e} "
            f"> {residual_tol:g}); Caccioppoli check invalidated")

    # bump eta(t, x) = eta_t(t) eta_x(x), C-infinity
    u_t = (ts - (t_lo + t_hi) / 2) / ((t_hi - t_lo) / 2)
    eta_t = _mollifier(u_t)
    deta_t = _mollifier_derivative(u_t) / ((t_hi - t_lo) / 2)
    dist = _wrapped_distance_grid(grid)
    x_rad = grid.L / 4.0
    eta_x = _mollifier(dist / x_rad)
    # spectral gradient of eta_x (smooth, so this is accurate)
    ex_hat = np.fft.fftn(eta_x.astype(np.complex128))
    grad_x = np.stack([np.fft.ifftn(1j * xi * ex_hat).real
                       for xi in grid.frequencies()], axis=-1)
    grad_x_sq = np.sum(grad_x ** 2, axis=-1)

    wt = np.full(len(ts), dt)
    wt[0] = wt[-1] = dt / 2
    h = grid.cell_measure
    dv_sq = np.sum(np.abs(d_slices) ** 2, axis=-1)
    v_sq = np.sum(np.abs(slices) ** 2, axis=-1)
    eta_sq = (eta_t[:, None] if grid.n == 1
              else eta_t[:, None, None]) ** 2 * eta_x ** 2
    grad_eta_sq = ((deta_t[:, None] if grid.n == 1
                    else deta_t[:, None, None]) ** 2 * eta_x ** 2
                   + (eta_t[:, None] if grid.n == 1
                      else eta_t[:, None, None]) ** 2 * grad_x_sq)
    lhs = float(np.sum(wt[:, None] * (dv_sq * eta_sq).reshape(len(ts), -1)) * h)
    rhs = float(np.sum(wt[:, None] * (v_sq * grad_eta_sq).reshape(len(ts), -1)) * h)
    return CaccioppoliResult(lhs, rhs, residual)
