"""Numerical workbench for perturbed Dirac-type operators BD and DB on periodic grids."""

from .errors import (
    BDCalcError,
    BudgetError,
    ConfigurationError,
    DimensionError,
    RangeError,
    SolverError,
    ValidationError,
)
from .spectral import Field, Grid, Multiplier, apply_multiplier, grad_k_norm, inner, norm
from .operators import (
    DiracSystem,
    HypothesisReport,
    MultOp,
    SymbolOp,
    assemble_dense,
    make_multop,
    symbol_dirac1d,
    symbol_higher_order,
    symbol_hodge_dirac,
    symbol_inhomogeneous,
    validate,
)

__version__ = "0.1.0"
