"""Exception types shared across the package.

Every error raised by this package derives from :class:`MstpError`.  The
``exit_code`` attribute drives the CLI's exit status: 2 for input/validation
failures, 1 for runtime failures.
"""
from __future__ import annotations


class MstpError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ValidationError(MstpError):
    """Base class for errors caused by malformed or inconsistent input."""

    exit_code = 2


# ---------------------------------------------------------------------------
# core model
# ---------------------------------------------------------------------------

class NonPositiveDuration(ValidationError):
    """A duration or scale that must be positive was zero or negative."""


class NonDivisorScale(ValidationError):
    """The incremental scale does not divide the temporal scale."""


class SchemaError(ValidationError):
    """A level schema, state, or sequence violates a structural invariant."""


class SchemaMismatch(ValidationError):
    """Two values that must share one schema reference different schemas."""


class ParseError(ValidationError):
    """A manifest or table could not be parsed.

    Attributes:
        line: 1-based line number of the offending record, when known.
    """

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


# ---------------------------------------------------------------------------
# agents / generation
# ---------------------------------------------------------------------------

class BackendUnavailable(MstpError):
    """A decision or generation backend cannot serve the request."""


class InvalidAgentOutput(MstpError):
    """An agent emitted a label or decision outside its allowed set."""


class MissingRow(MstpError):
    """A Markov model has no transition row for the requested key."""


class MissingGroundTruth(MstpError):
    """A ground-truth-bound backend has no frame or state for the step."""


class DimensionMismatch(ValidationError):
    """Two images or feature sets have incompatible dimensions."""


# ---------------------------------------------------------------------------
# loop engine
# ---------------------------------------------------------------------------

class MissingTruth(MstpError):
    """Ground truth is not available at a step that must be scored."""


class NoOutputPoints(ValidationError):
    """The grid has no output points, so the objective is undefined."""


class ClosedLoopError(MstpError):
    """A backend failed mid-run.

    Attributes:
        step_k: the 1-based step being produced when the failure occurred.
        partial: the trajectory accumulated before the failure.
    """

    def __init__(self, step_k: int, partial, cause: Exception):
        super().__init__(f"step {step_k}: {cause}")
        self.step_k = step_k
        self.partial = partial
        self.cause = cause


# ---------------------------------------------------------------------------
# augment
# ---------------------------------------------------------------------------

class NoTransitions(ValidationError):
    """Rebalancing is undefined for a sequence without transitions."""


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

class LengthMismatch(ValidationError):
    """Prediction and truth sequences differ in length."""


class EmptyInput(ValidationError):
    """An operation that needs at least one element received none."""


class ShapeMismatch(ValidationError):
    """Activation stacks differ in layer names or shapes."""


class ZeroVector(ValidationError):
    """An embedding with zero norm cannot be scored."""


class EmptyRanking(ValidationError):
    """Retrieval metrics need a non-empty ranking."""


class TooSmallForScales(ValidationError):
    """The image cannot support the requested number of dyadic scales."""


class DegenerateCovariance(UserWarning):
    """A covariance matrix was not positive semi-definite within tolerance."""


# ---------------------------------------------------------------------------
# dataset
# ---------------------------------------------------------------------------

class SequenceTooShort(ValidationError):
    """The sequence cannot fill a single window at any requested horizon."""


# ---------------------------------------------------------------------------
# analysis
# ---------------------------------------------------------------------------

class DegenerateInput(ValidationError):
    """Regression input has no variance along the explanatory axis."""


# ---------------------------------------------------------------------------
# remote protocol
# ---------------------------------------------------------------------------

class TransportError(MstpError):
    """The HTTP transport failed before a response was received."""


class Timeout(TransportError):
    """The request exceeded its per-attempt timeout on every retry."""


class ProtocolError(MstpError):
    """The server answered outside the protocol (bad status or body)."""


class InvariantViolation(MstpError):
    """The server's response violates a protocol invariant; never retried."""


class BindError(MstpError):
    """The mock server could not bind its address."""
