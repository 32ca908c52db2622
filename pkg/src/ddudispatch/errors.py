"""Exception hierarchy shared by every module of the package."""


class DispatchError(Exception):
    """Base class for all package errors."""


class ParseError(DispatchError):
    """A case file could not be read or does not match the JSON schema."""


class ValidationError(DispatchError):
    """A case violates a domain invariant."""

    def __init__(self, message, field=None, index=None):
        super().__init__(message)
        self.field = field
        self.index = index


class SingularityError(DispatchError):
    """The network admittance matrix cannot be inverted."""


class BackendError(DispatchError):
    """The LP/MILP solver is unavailable or failed internally."""


class InvariantViolation(DispatchError):
    """A decision or intermediate result breaks a model invariant."""


class SizeError(DispatchError):
    """An instance is too large for a brute-force routine."""


class InfeasibleRecourse(DispatchError):
    """The re-dispatch LP has no feasible solution for the given scenario."""


class InfeasibleModelError(DispatchError):
    """An optimization model that should be feasible is not (assumption A1 fails)."""


class UnboundedError(DispatchError):
    """An optimization model that must be bounded reported unboundedness."""


class BigMTooSmall(DispatchError):
    """A big-M complementarity row is tight on both sides at the optimum."""


class SingularBasis(DispatchError):
    """An active-set basis matrix is not invertible."""


class DegeneracyUnresolved(DispatchError):
    """No completion of a rank-deficient active set yields a feasible vertex."""


class MaxIterations(DispatchError):
    """An iterative algorithm hit its iteration guard before converging."""

    def __init__(self, message, log=None):
        super().__init__(message)
        self.log = log


class GenerationFailed(DispatchError):
    """Random case generation could not produce a robust-feasible case."""
