"""Exception types shared across the framework."""

from __future__ import annotations


class ChainlensError(Exception):
    """Base class for every error raised by this package."""


# --- registry / composition -------------------------------------------------

class DuplicateMethodName(ChainlensError):
    pass


class MultiplePredictMethods(ChainlensError):
    pass


class MultipleTransformMethods(ChainlensError):
    pass


class DuplicateBlockInChain(ChainlensError):
    pass


class TooFewBranches(ChainlensError):
    pass


class UnknownBlock(ChainlensError):
    pass


class UnknownMethod(ChainlensError):
    pass


class TypeMismatch(ChainlensError):
    """A value did not match a method parameter's declared type."""

    def __init__(self, method: str, param: str, message: str | None = None):
        self.method = method
        self.param = param
        super().__init__(message or f"parameter '{param}' of '{method}' has the wrong type")


class ShutdownActive(ChainlensError):
    def __init__(self, reason: str = ""):
        self.reason = reason
        super().__init__(f"pipeline is shut down: {reason}" if reason else "pipeline is shut down")


class RejectedByFilter(ChainlensError):
    def __init__(self, message: str, block_id: str = ""):
        self.message = message
        self.block_id = block_id
        super().__init__(message)


class NoTransformMethod(ChainlensError):
    pass


# --- datasets / models --------------------------------------------------------

class SchemaMismatch(ChainlensError):
    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        self.row = row
        self.column = column
        super().__init__(message)


class MissingHeader(ChainlensError):
    pass


class EmptyDataset(ChainlensError):
    pass


class SingleClassDataset(ChainlensError):
    pass


class DimensionMismatch(ChainlensError):
    pass


class IndexOutOfRange(ChainlensError):
    pass


# --- rule DSL -----------------------------------------------------------------

class ParseError(ChainlensError):
    """Syntax error with a 0-based byte offset and the tokens that would have been legal."""

    def __init__(self, position: int, expected: tuple[str, ...], message: str | None = None):
        self.position = position
        self.expected = tuple(expected)
        super().__init__(
            message or f"parse error at offset {position}: expected {', '.join(self.expected)}"
        )


class UnboundField(ChainlensError):
    pass


class InvalidRule(ChainlensError):
    """Rule is syntactically valid but violates a bind-time constraint."""


class AttributionUnavailable(ChainlensError):
    pass


# --- control blocks -------------------------------------------------------------

class NoBranchMatched(ChainlensError):
    pass


class EmptyOutputs(ChainlensError):
    pass


class ArityMismatch(ChainlensError):
    pass


class UnknownLabel(ChainlensError):
    pass


class NoPendingCorrections(ChainlensError):
    pass


# --- explainers ------------------------------------------------------------------

class TargetNotPredictive(ChainlensError):
    pass


class TooManyFeaturesForExact(ChainlensError):
    pass


class KTooLarge(ChainlensError):
    pass


# --- CLI / config ------------------------------------------------------------------

class UnknownBlockId(ChainlensError):
    pass


class InvalidConfig(ChainlensError):
    pass
