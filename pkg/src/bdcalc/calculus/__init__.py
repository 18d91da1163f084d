"""Functional calculus of BD and DB."""

from .quadrature import Quadrature
from .resolvent import RangeCompression, backward_residual, engine, qt, qt_mean, resolvent
from .sqfn import (
    SquareFunctionReport,
    default_quadrature,
    duality_check,
    first_order_system,
    inhomogeneous_split,
    spectral_window,
    square_function,
    square_function_ratios,
)
from .sign import (
    LinearMap,
    SpectralProjections,
    newton_sign,
    sgn_columns,
    sgn_oracle_data,
    sgn,
    sgn_constant,
    sgn_oracle,
    spectral_projections,
)
from .evolution import Semigroup, semigroup
from .spectrum import SpectrumReport, sector_distance, spectrum
from .splitting import (
    HodgeSplitting,
    exterior_derivative,
    periodic_difference,
    pi_b,
    random_accretive_matrix,
    splitting_projections,
    sum_op,
)
from .offdiag import OffDiagonalProfile, offdiag_profile, smooth_cutoff, smooth_trial, torus_distance
