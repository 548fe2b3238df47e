"""Life-insurance liability pricing on polynomial-diffusion market models.

The market (benchmark portfolio, OIS bond, longevity bond, short rate and
mortality intensity) is driven by a polynomial diffusion on a compact state
space, which makes conditional moments matrix exponentials and the prices of
the classic building blocks (pure endowment, term insurance, annuity) explicit
for polynomial payoffs.  Continuous payoffs are priced through Chebyshev
approximants, hedges come from the risk-minimizing decomposition in the two
traded bonds, and parameters are estimated with a Kalman-filter MLE pipeline.
"""

from .polynomials import (
    MultiIndex,
    Polynomial,
    PolynomialParseError,
    enumerate_basis,
    format_polynomial,
    parse_polynomial,
)
from .generator import (
    DiffusionSpec,
    GeneratorMatrix,
    NumericalError,
    StateSpaceReport,
    apply_generator,
    build_generator,
    conditional_expectation,
    conditional_expectation_path,
    matrix_exponential,
    rational_bounds,
    validate_state_space,
)

__version__ = "0.1.0"

__all__ = [
    "MultiIndex",
    "Polynomial",
    "PolynomialParseError",
    "enumerate_basis",
    "format_polynomial",
    "parse_polynomial",
    "DiffusionSpec",
    "GeneratorMatrix",
    "NumericalError",
    "StateSpaceReport",
    "apply_generator",
    "build_generator",
    "conditional_expectation",
    "conditional_expectation_path",
    "matrix_exponential",
    "rational_bounds",
    "validate_state_space",
    "__version__",
]
