"""Tensor DSL: expression trees, ComputeOp, parser, validator, type inference."""

from macmap.tensor_ir.expr import (
    Binary,
    Cast,
    ComputeOp,
    Expr,
    FloatConst,
    FloorDiv,
    IntConst,
    Load,
    LoopKind,
    LoopRef,
    LoopVar,
    Mod,
    Opcode,
    Role,
    Store,
    TensorDecl,
)
from macmap.tensor_ir.parser import parse_compute
from macmap.tensor_ir.printer import format_compute, format_expr
from macmap.tensor_ir.typecheck import infer_types
from macmap.tensor_ir.validate import validate

__all__ = [
    "Binary",
    "Cast",
    "ComputeOp",
    "Expr",
    "FloatConst",
    "FloorDiv",
    "IntConst",
    "Load",
    "LoopKind",
    "LoopRef",
    "LoopVar",
    "Mod",
    "Opcode",
    "Role",
    "Store",
    "TensorDecl",
    "format_compute",
    "format_expr",
    "infer_types",
    "parse_compute",
    "validate",
]
