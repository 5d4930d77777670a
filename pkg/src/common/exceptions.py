from typing import Optional


class PomdpToolkitError(Exception):
    """Base class for every error raised by the solver library."""


class PomdpParseError(PomdpToolkitError):
    """Malformed `.pomdp` text."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(f"{prefix}{message}")


class ModelValidationError(PomdpToolkitError):
    """A parsed model violates a probability invariant."""


class InvalidBelief(PomdpToolkitError):
    """Vector is not a point on the probability simplex."""


class ZeroProbabilityObservation(PomdpToolkitError):
    """Belief update requested for an observation that cannot occur."""


class BlowupExceeded(PomdpToolkitError):
    """Exact enumeration would exceed the configured vector cap."""


class DuplicateSupport(PomdpToolkitError):
    """Support belief already present in the GP training set."""


class FactorizationFailure(PomdpToolkitError):
    """Kernel matrix stayed indefinite after the maximum jitter."""


class GridTooLarge(PomdpToolkitError):
    """Fixed belief grid exceeds the configured size cap."""


class SolverError(PomdpToolkitError):
    """Failure inside a solver run, tagged with the stage that failed."""

    def __init__(self, message: str, stage: Optional[int] = None):
        self.stage = stage
        prefix = f"stage {stage}: " if stage is not None else ""
        super().__init__(f"{prefix}{message}")


class BenchmarkConfigError(PomdpToolkitError):
    """Invalid benchmark spec file or override."""
