"""Built-in tensorized instructions and the ``.intr`` loader."""

from macmap.intrinsics.registry import (
    BUILTIN_NAMES,
    Intrinsic,
    OperandRule,
    RuleKind,
    builtin,
    default_registry,
    format_intrinsic,
    load_intrinsic,
    parse_intrinsic,
    resolve,
)

__all__ = [
    "BUILTIN_NAMES",
    "Intrinsic",
    "OperandRule",
    "RuleKind",
    "builtin",
    "default_registry",
    "format_intrinsic",
    "load_intrinsic",
    "parse_intrinsic",
    "resolve",
]
