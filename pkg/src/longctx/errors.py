"""Exception hierarchy shared across the toolkit.

Each class maps to one CLI exit code so scripted callers can branch on
failures without parsing messages.
"""


class LongCtxError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class ConfigurationError(LongCtxError):
    """Invalid parameters, infeasible plans, conflicting flags."""

    exit_code = 2


class FormatError(LongCtxError):
    """Corrupt or malformed input files (bad magic, truncated records)."""

    exit_code = 3


class EndpointError(LongCtxError):
    """Completion endpoint unreachable or failing after all retries."""

    exit_code = 4


class VerificationError(LongCtxError):
    """An output failed an integrity or conservation check."""

    exit_code = 5


class IntegrityError(VerificationError):
    """Cross-referenced records disagree (missing doc, id mismatch)."""


class NumericError(LongCtxError):
    """NaN/Inf detected during training or gradient computation."""


class DivergenceError(LongCtxError):
    """Training loss ran away past the divergence threshold."""
