"""Phase-field neuron growth: spline collocation solver, morphometry and growth control."""

from .splines import (
    KnotVector,
    SplineSpace2D,
    CollocationOperators,
    Field,
    open_uniform_knots,
    basis_eval,
    basis_derivatives,
    greville_points,
    assemble_collocation_operators,
)

__version__ = "0.1.0"
