"""Exception taxonomy shared by all sciloop modules."""


class SciLoopError(Exception):
    """Base class for every error raised by this package."""


# --- expression language ---------------------------------------------------

class ExpressionSyntaxError(SciLoopError):
    """Malformed hypothesis text. Carries the character position of the fault."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class UnsupportedFunction(SciLoopError):
    """Function name outside the hypothesis grammar (includes ``pow``)."""

    def __init__(self, name: str, position: int = -1):
        super().__init__(f"unsupported function {name!r}")
        self.name = name
        self.position = position


class UnboundName(SciLoopError):
    """A variable or free constant lacks a binding at evaluation time."""


# --- oracles ----------------------------------------------------------------

class UnknownBenchmark(SciLoopError):
    pass


class MalformedManifest(SciLoopError):
    pass


class BudgetExhausted(SciLoopError):
    """Raised on any query once the oracle budget has hit zero."""


class InputOutOfBounds(SciLoopError):
    def __init__(self, dimension: str, value, lo, hi):
        super().__init__(f"{dimension}={value} outside [{lo}, {hi}]")
        self.dimension = dimension


class UnknownFamily(SciLoopError):
    pass


class UnknownMotif(SciLoopError):
    pass


class InvalidIntervention(SciLoopError):
    pass


class NonConvergence(SciLoopError):
    """Steady-state integration hit the step cap with a large residual."""

    def __init__(self, residual: float, steps: int):
        super().__init__(f"no fixed point after {steps} steps (residual {residual:.3e})")
        self.residual = residual
        self.steps = steps


# --- fitting ----------------------------------------------------------------

class NonFiniteModel(SciLoopError):
    """Every fit start produced predominantly non-finite predictions."""


class InsufficientData(SciLoopError):
    pass


# --- ensemble / proposer ----------------------------------------------------

class EmptyDistribution(SciLoopError):
    pass


class EmptyEnsemble(SciLoopError):
    pass


class ProposerFailure(SciLoopError):
    pass


class SchemaViolation(SciLoopError):
    pass


class PathRuleViolation(SciLoopError):
    pass


# --- engine / metrics / harness ---------------------------------------------

class EmptyRegion(SciLoopError):
    pass


class EmptyPool(SciLoopError):
    pass


class NodeSetMismatch(SciLoopError):
    pass


class DomainError(SciLoopError):
    pass


class LengthMismatch(SciLoopError):
    pass


class EmptyResults(SciLoopError):
    pass
