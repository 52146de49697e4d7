"""bisecta: spectral operator calculus for two-sided perturbed Dirac-type
operators on a discrete periodic torus, with measured square-function,
non-tangential-maximal-function and Carleson estimates."""

from .exterior_algebra import (
    GradeBasis,
    KVector,
    GradeMap,
    grade_basis,
    wedge,
    interior,
    inner,
    extend_hom,
    split_normal_tangential,
    join_normal_tangential,
)
from .spectral_grid import (
    Grid,
    Field,
    MultiplierOperator,
    dft,
    idft,
    assemble_multiplier,
    exterior_derivative,
    interior_derivative,
    div_grad_operator,
    hodge_projections,
    ellipticity_constant,
    random_field,
    write_field,
    read_field,
)
from .operator_core import (
    CoefficientField,
    PerturbedDiracOperator,
    AdaptedSplitting,
    assemble_operator,
    accretivity_angle,
    build_adapted_splitting,
    block_resolvent,
    kernel_range_check,
    hypothesis_battery,
    random_accretive_coefficients,
    diagonal_split_pair_1d,
)
from .functional_calculus import (
    Symbol,
    Contour,
    symbol_library,
    verify_decay,
    dunford,
    spectral_decomposition,
    spectral_projections,
    semigroup,
    Calculus,
)

__version__ = "0.1.0"
