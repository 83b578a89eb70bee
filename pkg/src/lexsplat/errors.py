"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: validation/parse problems
exit 2, guidance-transport problems exit 3, internal invariant
violations exit 4.
"""


class LexsplatError(Exception):
    """Base class for all package errors."""


class ValidationError(LexsplatError):
    """Input violates a documented precondition or invariant."""


class ParseError(ValidationError):
    """A file or byte stream does not conform to its format contract."""


class GuidanceError(LexsplatError):
    """A guidance provider failed to produce residuals."""


class TransportError(GuidanceError):
    """Remote guidance connection failed (unreachable, closed, timeout)."""


class ProtocolError(GuidanceError):
    """Wire-level violation: bad magic, version or capability mismatch."""


class InternalError(LexsplatError):
    """An internal invariant was violated; indicates a bug."""
