"""Exception types shared across the package."""


class OptnetsError(Exception):
    """Base class for every error raised by this package."""


class DimensionMismatch(OptnetsError):
    """Problem data with mutually inconsistent shapes."""


class NumericalFailure(OptnetsError):
    """Solver exceeded its pivot/iteration budget or lost numeric control."""


class NotPositiveDefinite(OptnetsError):
    """Quadratic term fails the positive-definiteness tolerance."""


class ParseError(OptnetsError):
    """Malformed problem document or constraint template."""


class SchemaViolation(OptnetsError):
    """Network document violates the serialization schema (bad shapes, cycles)."""


class IncompatibleBounds(OptnetsError):
    """Nodes cannot be merged because their variable bounds conflict."""


class NodeInfeasible(OptnetsError):
    """A node's instantiated program is infeasible at the realized inputs."""

    def __init__(self, node_id, message=None):
        self.node_id = node_id
        super().__init__(message or f"node {node_id!r} is infeasible at this input")


class NodeUnbounded(OptnetsError):
    """A node's instantiated program is unbounded at the realized inputs."""

    def __init__(self, node_id, message=None):
        self.node_id = node_id
        super().__init__(message or f"node {node_id!r} is unbounded at this input")


class DomainBoundary(OptnetsError):
    """Input lies within the guard band of a gadget's singular set."""


class OracleUnavailable(OptnetsError):
    """Requested derivative information cannot be produced."""


class CurvatureTooSmall(OptnetsError):
    """Convexity probe failed; the supplied curvature parameter is too small."""


class BudgetExhausted(OptnetsError):
    """Anchor selection hit its sampling budget before reaching the target radius."""

    def __init__(self, message, achieved_radius=None):
        self.achieved_radius = achieved_radius
        super().__init__(message)


class ScaleExceeded(OptnetsError):
    """Requested instance is beyond the supported desk scale."""


class NoRegion(OptnetsError):
    """Query point lies in no retained critical region."""


class UnsupportedFormat(OptnetsError):
    """Image file is not an 8-bit PGM (P5) or PPM (P6)."""
