"""Holomorphic functional calculus for bisectorial operators.

Symbols live on a bisector S_mu around the real axis.  Decay classes:

* ``psi``      |psi(lambda)| <~ min(|lambda|^s, |lambda|^-s), admissible
               in the Dunford integral,
* ``phi``      bounded with |phi(lambda) - 1| <~ |lambda|^s and
               |phi(lambda)| <~ |lambda|^-s,
* ``rational`` bounded rational, computed directly from resolvents,
* ``indicator`` the spectral cutoffs; jump at 0, dense route only.

At desk scale the dense eigendecomposition is the normative route for
spectral projections and semigroups; the Dunford contour quadrature is
cross-validation for psi-class symbols.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
import scipy.linalg as sla

from .spectral_grid import Field, LinearMap
from .operator_core import PerturbedDiracOperator, ShiftedInverse, DENSE_CAP

__all__ = [
    "Symbol",
    "Contour",
    "SymbolDecayError",
    "DegenerateSpectrumError",
    "symbol_library",
    "verify_decay",
    "resolvent_family",
    "dunford",
    "DunfordHandle",
    "SpectralDecomposition",
    "spectral_decomposition",
    "spectral_projections",
    "semigroup",
    "Calculus",
]


class SymbolDecayError(ValueError):
    """A symbol violates its declared decay class on sampled rays."""


class DegenerateSpectrumError(RuntimeError):
    """Eigenstructure too close to the imaginary axis or too defective."""


@dataclass(frozen=True)
class Symbol:
    """Scalar holomorphic symbol on a bisector, with decay metadata."""

    name: str
    fn: callable
    decay: str              # "psi" | "phi" | "rational" | "indicator"
    s: float = 1.0          # decay exponent
    mu: float = np.pi / 2 - 1e-6
    value_at_zero: complex = 0.0

    def __call__(self, z):
        z = np.asarray(z, dtype=np.complex128)
        return np.asarray(self.fn(z), dtype=np.complex128)

    def scaled(self, t: float) -> "Symbol":
        """The symbol lambda -> self(t lambda)."""
        if t == 1.0:
            return self
        return replace(self, name=f"{self.name}@t={t:g}",
                       fn=lambda z, _f=self.fn, _t=t: _f(_t * z))

    def conjugate_dual(self) -> "Symbol":
        """lambda -> conj(self(conj lambda)); pairs with the adjoint operator."""
        return replace(self, name=f"{self.name}*",
                       fn=lambda z, _f=self.fn: np.conj(_f(np.conj(z))),
                       value_at_zero=np.conj(self.value_at_zero))


def _chi_plus(z):
    return (np.real(z) > 0).astype(np.complex128)


def _chi_minus(z):
    return (np.real(z) < 0).astype(np.complex128)


def _masked_exp(z, sign: float, mask) -> np.ndarray:
    """exp(sign z) on mask, 0 elsewhere; never evaluates exp off-mask."""
    safe = np.where(mask, sign * np.asarray(z, dtype=np.complex128), 0.0)
    return np.where(mask, np.exp(safe), 0.0)


@lru_cache(maxsize=1)
def symbol_library() -> dict:
    """Named symbols used throughout the estimates.

    q_odd          lambda / (1 + lambda^2)        (psi, s = 1)
    p_even         1 / (1 + lambda^2)             (rational, bounded)
    resolvent      1 / (1 + i lambda)             (phi, s = 1)
    p_minus_q      (1 - lambda) / (1 + lambda^2)  (phi, s = 1)
    exp_defect_plus  ((exp(-z) - (1-z)/(1+z^2)) / z) chi+(z)   (psi)
    exp_both       exp(-z) chi+(z) + exp(z) chi-(z)            (phi)
    chi_plus/minus spectral cutoffs (indicator; dense route only)
    """
    lib = {}
    lib["q_odd"] = Symbol("q_odd", lambda z: z / (1.0 + z * z), "psi", 1.0)
    lib["p_even"] = Symbol("p_even", lambda z: 1.0 / (1.0 + z * z),
                           "rational", 1.0, value_at_zero=1.0)
    lib["resolvent"] = Symbol("resolvent", lambda z: 1.0 / (1.0 + 1j * z),
                              "phi", 1.0, value_at_zero=1.0)
    lib["p_minus_q"] = Symbol("p_minus_q", lambda z: (1.0 - z) / (1.0 + z * z),
                              "phi", 1.0, value_at_zero=1.0)

    def exp_defect_plus(z):
        z = np.asarray(z, dtype=np.complex128)
        mask = np.real(z) > 0
        zs = np.where(mask, z, 1.0)
        val = (np.exp(np.where(mask, -zs, 0.0)) - (1.0 - zs) / (1.0 + zs * zs)) / zs
        return np.where(mask, val, 0.0)

    lib["exp_defect_plus"] = Symbol("exp_defect_plus", exp_defect_plus, "psi", 1.0)

    lib["exp_both"] = Symbol(
        "exp_both",
        lambda z: (_masked_exp(z, -1.0, np.real(z) > 0)
                   + _masked_exp(z, 1.0, np.real(z) < 0)),
        "phi", 1.0, value_at_zero=1.0)
    lib["exp_plus"] = Symbol(
        "exp_plus", lambda z: _masked_exp(z, -1.0, np.real(z) > 0),
        "indicator", 1.0)
    lib["exp_minus"] = Symbol(
        "exp_minus", lambda z: _masked_exp(z, 1.0, np.real(z) < 0),
        "indicator", 1.0)
    lib["q_exp_plus"] = Symbol(
        "q_exp_plus", lambda z: z * _masked_exp(z, -1.0, np.real(z) > 0),
        "psi", 1.0)
    lib["chi_plus"] = Symbol("chi_plus", _chi_plus, "indicator")
    lib["chi_minus"] = Symbol("chi_minus", _chi_minus, "indicator")
    return lib


def verify_decay(symbol: Symbol, samples_per_ray: int = 100,
                 tolerance_constant: float = 1e3) -> float:
    """Sample the declared decay class on rays of the bisector.

    100 points per ray at |lambda| in [1e-6, 1e6], rays at arguments
    0+, +-0.99 mu and their mirrors.  Returns the fitted constant;
    raises SymbolDecayError when the class is violated.
    """
    radii = np.logspace(-6, 6, samples_per_ray)
    angles = [1e-12, 0.99 * symbol.mu, -0.99 * symbol.mu]
    angles += [np.pi - a for a in angles]
    worst = 0.0
    s = symbol.s
    for ang in angles:
        z = radii * np.exp(1j * ang)
        vals = np.abs(symbol(z))
        if symbol.decay == "psi":
            bound = np.minimum(radii ** s, radii ** (-s))
            worst = max(worst, float(np.max(vals / bound)))
        elif symbol.decay == "phi":
            near = radii <= 1.0
            dev = np.abs(symbol(z) - 1.0)
            worst = max(worst, float(np.max(dev[near] / radii[near] ** s)))
            worst = max(worst, float(np.max(vals[~near] * radii[~near] ** s)))
        else:
            worst = max(worst, float(np.max(vals)))
    if worst > tolerance_constant:
        raise SymbolDecayError(
            f"symbol {symbol.name} violates decay class {symbol.decay} "
            f"(constant {worst:.2e})")
    return worst


# ---------------------------------------------------------------------------
# rational calculus from resolvents


@dataclass
class ResolventFamily:
    """R_t, R_-t, P_t, Q_t of one generator A at a fixed scale t.

    P_t = (I + t^2 A^2)^{-1} = (R_t + R_-t)/2,
    Q_t = t A (I + t^2 A^2)^{-1} = i (R_t - R_-t)/2.
    """

    plus: ShiftedInverse
    minus: ShiftedInverse
    t: float

    @property
    def p(self) -> LinearMap:
        return 0.5 * (self.plus + self.minus)

    @property
    def q(self) -> LinearMap:
        return 0.5j * (self.plus - self.minus)


def resolvent_family(generator: LinearMap, t: float) -> ResolventFamily:
    if t <= 0:
        raise ValueError("t must be positive")
    return ResolventFamily(ShiftedInverse(generator, 1.0, 1j * t),
                           ShiftedInverse(generator, 1.0, -1j * t), t)


# ---------------------------------------------------------------------------
# Dunford contour quadrature


@dataclass(frozen=True)
class Contour:
    """Four-ray contour around the bisector, trapezoidal in log radius.

    Rays at +-theta and pi -+ theta, oriented counter clockwise around
    the bisector: each sector is entered along its upper boundary ray
    from infinity and exited along the lower one.
    """

    theta: float
    r_min: float
    r_max: float
    nodes_per_decade: int = 40

    def nodes_weights(self):
        """Complex nodes and d-lambda weights including orientation."""
        decades = np.log10(self.r_max / self.r_min)
        count = max(int(np.ceil(decades * self.nodes_per_decade)) + 1, 8)
        logr = np.linspace(np.log(self.r_min), np.log(self.r_max), count)
        r = np.exp(logr)
        w = np.full(count, logr[1] - logr[0])
        w[0] *= 0.5
        w[-1] *= 0.5
        w = w * r  # d lambda = e^{i phi} r d(log r)
        nodes, weights = [], []
        th = self.theta
        # right sector: in along arg=+theta (infinity -> 0), out along -theta
        for phi, sign in ((th, -1.0), (-th, +1.0),
                          (np.pi + th, -1.0), (np.pi - th, +1.0)):
            e = np.exp(1j * phi)
            nodes.append(r * e)
            weights.append(sign * w * e)
        return np.concatenate(nodes), np.concatenate(weights)


def default_contour(T: PerturbedDiracOperator, symbol: Symbol,
                    scale: float | None = None,
                    nodes_per_decade: int = 40) -> Contour:
    """Contour defaults: theta midway between omega and pi/2 (clamped into
    (omega + 0.05, mu - 0.05)), radii 1e-6 .. 1e6 times the operator scale."""
    omega = T.omega
    theta = np.clip((omega + np.pi / 2) / 2, omega + 0.05, symbol.mu - 0.05)
    if not (omega < theta < symbol.mu):
        raise ValueError("no admissible contour angle between omega and mu")
    if scale is None:
        scale = max(float(np.linalg.norm(T.dense(), 2)), 1e-12)
    return Contour(float(theta), 1e-6 * scale, 1e6 * scale, nodes_per_decade)


class DunfordHandle(LinearMap):
    """psi(T) by contour quadrature on the range part plus psi(0) P0.

    The kernel projector (from the adapted splitting) carries the
    psi(0) I_{H0} summand; the contour integral is applied to
    (I - P0) f.  Node count is validated by the doubling check in
    convergence_defect().
    """

    def __init__(self, symbol: Symbol, T: PerturbedDiracOperator,
                 contour: Contour, kernel_projector: np.ndarray | None):
        if symbol.decay not in ("psi",):
            raise ValueError("Dunford quadrature needs a psi-class symbol")
        self.symbol, self.T, self.contour = symbol, T, contour
        self.grid = T.grid
        self.source_dim = self.target_dim = T.source_dim
        self.source_basis = self.target_basis = T.source_basis
        self.kernel_projector = kernel_projector

    def apply(self, f: Field) -> Field:
        return self._apply(f, self.contour)

    def _apply(self, f: Field, contour: Contour) -> Field:
        vec = f.flat()
        if self.kernel_projector is not None:
            p0v = self.kernel_projector @ vec
            vec = vec - p0v
        else:
            p0v = np.zeros_like(vec)
        nodes, weights = contour.nodes_weights()
        td = self.T.dense()
        eye = np.eye(td.shape[0])
        psi_vals = self.symbol(nodes)
        acc = np.zeros_like(vec)
        for lam, w, pv in zip(nodes, weights, psi_vals):
            if pv == 0.0 and w != 0.0:
                continue
            sol = sla.lu_solve(sla.lu_factor(lam * eye - td), vec)
            acc = acc + (w * pv) * sol
        out = acc / (2j * np.pi) + self.symbol.value_at_zero * p0v
        return Field.from_flat(self.grid, out, self.source_dim,
                               basis=self.source_basis)

    def convergence_defect(self, probe: Field) -> float:
        """Relative change under halving r_min, doubling r_max and node density."""
        base = self._apply(probe, self.contour).flat()
        finer = Contour(self.contour.theta, self.contour.r_min / 2,
                        self.contour.r_max * 2, self.contour.nodes_per_decade * 2)
        ref = self._apply(probe, finer).flat()
        return float(np.linalg.norm(base - ref)
                     / max(np.linalg.norm(ref), 1e-300))


def dunford(symbol: Symbol, T: PerturbedDiracOperator, contour: Contour,
            kernel_projector: np.ndarray | None = None) -> DunfordHandle:
    return DunfordHandle(symbol, T, contour, kernel_projector)


# ---------------------------------------------------------------------------
# dense spectral route (normative at desk scale)


@dataclass(eq=False)
class SpectralDecomposition:
    """Eigendecomposition of the dense operator with bisector bookkeeping.

    Eigenvalues with |lambda| below the kernel tolerance form the kernel
    bucket; eigenvalues within axis_tol of the imaginary axis but away
    from zero are rejected as a degenerate configuration (bisectoriality
    guarantees a spectral gap in exact arithmetic, so near-axis
    eigenvalues signal a discretization artifact).
    """

    eigenvalues: np.ndarray
    vectors: np.ndarray
    vectors_inv: np.ndarray
    plus_mask: np.ndarray
    minus_mask: np.ndarray
    zero_mask: np.ndarray
    residual: float

    def function_matrix(self, g_on_spectrum, value_at_zero=0.0) -> np.ndarray:
        vals = np.asarray(g_on_spectrum, dtype=np.complex128).copy()
        vals[self.zero_mask] = value_at_zero
        return (self.vectors * vals) @ self.vectors_inv

    def apply_symbol(self, symbol: Symbol, t: float = 1.0) -> np.ndarray:
        lam = self.eigenvalues
        vals = np.zeros_like(lam)
        nz = ~self.zero_mask
        vals[nz] = symbol(t * lam[nz])
        return self.function_matrix(vals, symbol.value_at_zero)

    @property
    def chi_plus(self) -> np.ndarray:
        return self.function_matrix(self.plus_mask.astype(np.complex128))

    @property
    def chi_minus(self) -> np.ndarray:
        return self.function_matrix(self.minus_mask.astype(np.complex128))

    @property
    def kernel_projector(self) -> np.ndarray:
        return self.function_matrix(self.zero_mask.astype(np.complex128),
                                    value_at_zero=1.0)

    def semigroup_matrix(self, t: float) -> np.ndarray:
        """e^{-tT} chi+(T) for t >= 0, e^{-tT} chi-(T) for t <= 0."""
        lam = self.eigenvalues
        if t >= 0:
            vals = np.where(self.plus_mask, np.exp(-t * lam), 0.0)
        else:
            vals = np.where(self.minus_mask, np.exp(-t * lam), 0.0)
        return self.function_matrix(vals)


def spectral_decomposition(op, kernel_rtol: float = 1e-10,
                           axis_rtol: float = 1e-10,
                           residual_limit: float = 1e-7) -> SpectralDecomposition:
    """Dense eigendecomposition with degenerate-configuration guards.

    op: a LinearMap (dense() is used) or a dense matrix.
    """
    td = op.dense() if hasattr(op, "dense") else np.asarray(op)
    if td.shape[0] > DENSE_CAP:
        raise ValueError("dense spectral route capped at 4096 unknowns")
    lam, v = np.linalg.eig(td)
    vinv = np.linalg.inv(v)
    scale = max(float(np.abs(lam).max()), 1e-300)
    residual = float(np.linalg.norm((v * lam) @ vinv - td, 2) / scale)
    if residual > residual_limit:
        raise DegenerateSpectrumError(
            f"eigendecomposition residual {residual:.2e} beyond tolerance; "
            f"retry with perturbed coefficients")
    zero = np.abs(lam) < kernel_rtol * scale
    near_axis = (np.abs(lam.real) < axis_rtol * scale) & ~zero
    if np.any(near_axis):
        worst = lam[near_axis][np.argmin(np.abs(lam[near_axis].real))]
        raise DegenerateSpectrumError(
            f"eigenvalue {worst:.3e} within {axis_rtol:.0e} of the imaginary "
            f"axis but nonzero; regenerate coefficients")
    plus = (lam.real > 0) & ~zero
    minus = (lam.real < 0) & ~zero
    return SpectralDecomposition(lam, v, vinv, plus, minus, zero, residual)


def spectral_projections(T, decomposition: SpectralDecomposition | None = None):
    """Bounded spectral projections (chi+(T), chi-(T)) as dense matrices.

    chi+ + chi- is the projection onto closure R(T) along N(T).
    """
    dec = decomposition if decomposition is not None else spectral_decomposition(T)
    return dec.chi_plus, dec.chi_minus


def semigroup(T, t: float, decomposition: SpectralDecomposition | None = None):
    """Dense e^{-tT} chi+(T) (t >= 0) or e^{-tT} chi-(T) (t <= 0)."""
    dec = decomposition if decomposition is not None else spectral_decomposition(T)
    return dec.semigroup_matrix(t)


def semigroup_via_expm(T, t: float,
                       decomposition: SpectralDecomposition) -> np.ndarray:
    """Cross-check route: scaling-and-squaring expm of the restriction of
    -tT to the chi+ (or chi-) spectral subspace."""
    dec = decomposition
    mask = dec.plus_mask if t >= 0 else dec.minus_mask
    basis = dec.vectors[:, mask]
    td = T.dense() if hasattr(T, "dense") else np.asarray(T)
    restricted = np.linalg.lstsq(basis, td @ basis, rcond=None)[0]
    block = sla.expm(-t * restricted)
    left_inv = dec.vectors_inv[mask]
    return basis @ block @ left_inv


# ---------------------------------------------------------------------------
# bound calculus with route dispatch


class Calculus:
    """Functional calculus bound to one operator, with cached routes.

    route "auto": rational/indicator/exponential symbols go through the
    dense eigendecomposition (normative); explicit "rational" uses the
    resolvent-combination identities; "contour" runs the Dunford
    quadrature for psi-class symbols.
    """

    def __init__(self, T: PerturbedDiracOperator,
                 kernel_projector: np.ndarray | None = None):
        self.T = T
        self._dec = None
        self._kernel_projector = kernel_projector

    @property
    def decomposition(self) -> SpectralDecomposition:
        if self._dec is None:
            self._dec = spectral_decomposition(self.T)
        return self._dec

    @property
    def kernel_projector(self) -> np.ndarray:
        if self._kernel_projector is None:
            self._kernel_projector = self.decomposition.kernel_projector
        return self._kernel_projector

    def symbol_matrix(self, symbol: Symbol, t: float = 1.0) -> np.ndarray:
        return self.decomposition.apply_symbol(symbol, t)

    def apply(self, symbol: Symbol, t: float, f: Field,
              route: str = "auto") -> Field:
        if route in ("auto", "eig"):
            mat = self.symbol_matrix(symbol, t)
            return Field.from_flat(self.T.grid, mat @ f.flat(),
                                   self.T.source_dim, basis=f.basis)
        if route == "rational":
            return self._apply_rational(symbol, t, f)
        if route == "contour":
            handle = dunford(symbol, self.T,
                             default_contour(self.T, symbol),
                             self.kernel_projector)
            return handle.apply(f) if t == 1.0 else dunford(
                symbol.scaled(t), self.T,
                default_contour(self.T, symbol, scale=None),
                self.kernel_projector).apply(f)
        raise ValueError(f"unknown route {route!r}")

    def _apply_rational(self, symbol: Symbol, t: float, f: Field) -> Field:
        name = symbol.name.split("@")[0]
        rp = ShiftedInverse(self.T, 1.0, 1j * t)
        rm = ShiftedInverse(self.T, 1.0, -1j * t)
        if name == "q_odd":
            return 0.5j * (rp.apply(f) - rm.apply(f))
        if name == "p_even":
            return 0.5 * (rp.apply(f) + rm.apply(f))
        if name == "resolvent":
            return rp.apply(f)
        if name == "p_minus_q":
            p = 0.5 * (rp.apply(f) + rm.apply(f))
            q = 0.5j * (rp.apply(f) - rm.apply(f))
            return p - q
        raise ValueError(f"no resolvent formula for symbol {symbol.name!r}")
