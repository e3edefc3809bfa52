"""Exception hierarchy shared by every pass."""

from __future__ import annotations


class MacmapError(Exception):
    """Base class for all errors raised by this package."""


class DSLSyntaxError(MacmapError, SyntaxError):
    """Malformed DSL source. Carries a 1-based line/column and the expected token."""

    def __init__(self, message: str, line: int = 0, column: int = 0, expected: str | None = None):
        self.line = line
        self.column = column
        self.expected = expected
        where = f"{line}:{column}: " if line else ""
        suffix = f" (expected {expected})" if expected else ""
        super().__init__(f"{where}{message}{suffix}")
        # SyntaxError keeps its own positional fields; keep them coherent.
        self.lineno = line
        self.offset = column
        self.msg = f"{where}{message}{suffix}"

    def __str__(self) -> str:
        return self.msg


class ValidationError(MacmapError):
    """A ComputeOp invariant does not hold.

    ``kind`` is a short machine-readable tag such as ``"aliasing"`` or
    ``"non-affine"``; ``node`` is the offending object when there is one.
    """

    def __init__(self, kind: str, message: str, node: object = None):
        self.kind = kind
        self.node = node
        super().__init__(f"{kind}: {message}")


class TypeCheckError(MacmapError, TypeError):
    """Implicit narrowing or mismatched binary operand dtypes."""


class UnknownIntrinsic(MacmapError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class RuleError(MacmapError):
    """Operand rules are inconsistent with the intrinsic's semantics loops."""


class DivisibilityError(MacmapError):
    """A loop extent cannot be tiled by the instruction extent without padding."""


class PadUnsupported(MacmapError):
    """Zero padding would change the result of this op."""


class ScheduleError(MacmapError):
    """A schedule transform is malformed for the current loop nest."""


class InjectError(MacmapError):
    """The tensorize nest cannot be replaced by the intrinsic call."""


class ShapeError(MacmapError, ValueError):
    pass


class MissingInput(MacmapError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class NoFeasibleMapping(MacmapError):
    pass
