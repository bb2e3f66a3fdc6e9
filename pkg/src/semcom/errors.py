"""Exception taxonomy for the package.

Everything derives from SemcomError so callers (notably the CLI) can map
failure classes to exit codes without enumerating concrete types.
"""


class SemcomError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(SemcomError):
    """A configuration value violates its documented constraints."""


class DimMismatch(SemcomError):
    """Shapes or lengths of related objects disagree."""


class NotNormalized(SemcomError):
    """A probability vector does not sum to 1 within tolerance."""


class GenerationExhausted(SemcomError):
    """Context regeneration hit the attempt budget without a valid draw."""


class InvalidContext(SemcomError):
    """A context matrix violates a structural invariant."""


class DegenerateColumn(SemcomError):
    """A coder column normalizer collapsed to zero."""


class DegenerateRow(SemcomError):
    """A coder row normalizer collapsed to zero on supported entries."""


class DegenerateDistribution(SemcomError):
    """A sampled distribution has no probability mass."""


class NonConvergence(SemcomError):
    """An iterative computation did not converge and the caller asked for strictness."""


class NonFiniteLoss(SemcomError):
    """Training produced a NaN or infinite loss value."""


class EmptyTrace(SemcomError):
    """A chain trace has no post-burn-in states to summarize."""


class TooLarge(SemcomError):
    """An exhaustive oracle was asked to enumerate an infeasible space."""


class ZeroVector(SemcomError):
    """An operation requiring a nonzero vector received a zero one."""


class NotReached(SemcomError):
    """A search over symbol counts never met the requested threshold."""

    def __init__(self, max_symbols: int):
        super().__init__(f"threshold not reached within {max_symbols} symbols")
        self.max_symbols = max_symbols
