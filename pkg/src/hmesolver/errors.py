"""Exception hierarchy shared across the solver, oracles and CLI."""


class SolverError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(SolverError):
    """Malformed or inconsistent run configuration."""


class InfeasibleStateError(SolverError):
    """A counter state reconstructs a negative species count where one is consumed."""


class UnsupportedOrderError(SolverError):
    """A moment/exponent order outside what the configured closure supports."""


class MissingNeighborError(SolverError):
    """A shifted expectation was requested for a slow state absent from the field."""


class MassFloorError(SolverError):
    """Conditional-moment RHS requested where the marginal mass is below the floor."""


class NumericalInstabilityError(SolverError):
    """Non-finite values produced during time stepping."""


class EmptyDomainError(SolverError):
    """An operation requires a nonempty lattice domain."""


class InfeasibleMomentsError(SolverError):
    """Maximum-entropy targets lie outside the moment polytope of the grid."""


class DegenerateGridError(SolverError):
    """Zero-variance target on a multi-point grid with no usable fallback."""


class EmptyGridError(SolverError):
    """A probability grid with zero total mass where mass is required."""
