"""Normal forms, reaction geometry and quantum reaction rates near saddle equilibria."""
from .errors import (
    ConfigError,
    ConvergenceError,
    DomainError,
    NumericalValidityError,
    SaddlescopeError,
    SmallDivisorError,
    StabilityError,
    StructuralError,
)
from .normalform import NormalFormResult, cnf, nf_transform, qnf, weyl_order, weyl_symbol
from .polyalg import ActionPolynomial, PhasePolynomial, lie_transform, moyal_bracket, poisson_bracket
from .systems import SystemSpec, emm_spec, spec_from_dict

__version__ = "0.1.0"

__all__ = [
    "ActionPolynomial",
    "ConfigError",
    "ConvergenceError",
    "DomainError",
    "NormalFormResult",
    "NumericalValidityError",
    "PhasePolynomial",
    "SaddlescopeError",
    "SmallDivisorError",
    "StabilityError",
    "StructuralError",
    "SystemSpec",
    "cnf",
    "emm_spec",
    "lie_transform",
    "moyal_bracket",
    "nf_transform",
    "poisson_bracket",
    "qnf",
    "spec_from_dict",
    "weyl_order",
    "weyl_symbol",
]
