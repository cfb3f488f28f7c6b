from .expr import DomainError
from .hamiltonian import (
    HamiltonianExpr,
    HamiltonianSequence,
    NotTonelliError,
    ParameterError,
    Partials,
    PeriodicityError,
    TonelliCertificate,
    evaluate,
    parse,
    partials,
    require_tonelli,
    tonelli_check,
)
from .parser import ArityError, DSLError, DSLSyntaxError, UnknownIdentifierError

__all__ = [
    "ArityError", "DSLError", "DSLSyntaxError", "DomainError", "HamiltonianExpr",
    "HamiltonianSequence", "NotTonelliError", "ParameterError", "Partials",
    "PeriodicityError", "TonelliCertificate", "UnknownIdentifierError", "evaluate",
    "parse", "partials", "require_tonelli", "tonelli_check",
]
