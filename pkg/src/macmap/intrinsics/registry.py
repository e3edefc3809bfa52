"""Tensorized-instruction definitions and the ``.intr`` loader.

An ``.intr`` file is a ``.tdsl`` semantics block plus::

    intrinsic <name>                      # optional, defaults to the file stem
    rule <tensor>: <kind>(<loop>) ...     # one line per register tensor
    mnemonic "<opaque string>"

Rule kinds are ``vectorize``, ``broadcast``, ``unroll`` and ``passthrough``.
Lanes of a register are laid out row-major over its rules, outermost first.
"""

from __future__ import annotations

import functools
import re
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path

from macmap.errors import DSLSyntaxError, RuleError, UnknownIntrinsic
from macmap.tensor_ir.expr import ComputeOp, Load
from macmap.tensor_ir.parser import parse_lines
from macmap.tensor_ir.typecheck import infer_types
from macmap.tensor_ir.validate import validate


class RuleKind(str, Enum):
    VECTORIZE = "vectorize"
    BROADCAST = "broadcast"
    UNROLL = "unroll"
    PASSTHROUGH = "passthrough"


@dataclass(frozen=True, slots=True)
class OperandRule:
    kind: RuleKind
    loop: str | None = None
    lanes: int = 1

    def __str__(self) -> str:
        if self.kind is RuleKind.PASSTHROUGH:
            return "passthrough"
        return f"{self.kind.value}({self.loop})"


@dataclass(frozen=True)
class Intrinsic:
    name: str
    semantics: ComputeOp
    operand_rules: tuple[tuple[str, tuple[OperandRule, ...]], ...]
    target_mnemonic: str
    requires_inplace_acc: bool

    def rules_for(self, tensor: str) -> tuple[OperandRule, ...]:
        for name, rules in self.operand_rules:
            if name == tensor:
                return rules
        raise KeyError(tensor)

    @property
    def acc_register(self) -> str | None:
        """Register holding the running accumulator (lhs of the top-level Add)."""
        init, _ = self.semantics.split_value()
        if isinstance(init, Load):
            return init.tensor
        return None

    @property
    def result_register(self) -> str:
        return self.semantics.output.name

    @property
    def loop_extents(self) -> dict[str, int]:
        return {lv.name: lv.extent for lv in self.semantics.loops}

    @property
    def macs_per_call(self) -> int:
        return self.semantics.mac_count

    @property
    def lanes(self) -> int:
        n = 1
        for lv in self.semantics.data_parallel_loops:
            n *= lv.extent
        return n

    @property
    def reduction_width(self) -> int:
        n = 1
        for lv in self.semantics.reduction_loops:
            n *= lv.extent
        return n


_RULE_RE = re.compile(r"^\s*rule\s+([A-Za-z_]\w*)\s*:\s*(.*?)\s*(?:#.*)?$")
_KIND_RE = re.compile(r"([A-Za-z_]\w*)(?:\(\s*([A-Za-z_]\w*)\s*(?:,\s*(\d+)\s*)?\))?")
_MNEMONIC_RE = re.compile(r'^\s*mnemonic\s+"([^"]*)"\s*(?:#.*)?$')
_NAME_RE = re.compile(r"^\s*intrinsic\s+([A-Za-z_]\w*)\s*(?:#.*)?$")


def _parse_rules(lineno: int, body: str, extents: dict[str, int]) -> tuple[OperandRule, ...]:
    rules: list[OperandRule] = []
    pos = 0
    body = body.strip()
    while pos < len(body):
        m = _KIND_RE.match(body, pos)
        if m is None:
            raise DSLSyntaxError(f"bad rule text {body[pos:]!r}", lineno, pos + 1, "rule kind")
        kind_s, loop, count = m.groups()
        try:
            kind = RuleKind(kind_s)
        except ValueError:
            raise DSLSyntaxError(f"unknown rule kind {kind_s!r}", lineno, pos + 1, "rule kind") from None
        if kind is RuleKind.PASSTHROUGH:
            if loop is not None:
                raise RuleError(f"line {lineno}: passthrough takes no loop")
            rules.append(OperandRule(kind))
        else:
            if loop is None:
                raise DSLSyntaxError(f"{kind_s} needs a loop", lineno, pos + 1, "'(' loop ')'")
            if loop not in extents:
                raise RuleError(f"line {lineno}: rule refers to unknown loop {loop!r}")
            lanes = extents[loop]
            if count is not None and int(count) != lanes:
                raise RuleError(f"line {lineno}: {kind_s}({loop}) count {count} != loop extent {lanes}")
            rules.append(OperandRule(kind, loop, lanes))
        pos = m.end()
        while pos < len(body) and body[pos] in " \t":
            pos += 1
    if not rules:
        raise RuleError(f"line {lineno}: empty rule list")
    return tuple(rules)


def _check_rules(op: ComputeOp, name: str, rules: dict[str, tuple[OperandRule, ...]]) -> None:
    needed = [t.name for t in op.inputs]
    if op.update:
        needed.append(op.output.name)
    elif not op.reduction_loops:
        needed.append(op.output.name)
    for t in needed:
        if t not in rules:
            raise RuleError(f"{name}: no operand rule for register {t!r}")
    for t, rs in rules.items():
        if t not in needed:
            raise RuleError(f"{name}: rule for {t!r}, which is not an operand register")
        kinds = [r.kind for r in rs]
        if RuleKind.PASSTHROUGH in kinds and len(rs) != 1:
            raise RuleError(f"{name}: passthrough must be the only rule for {t!r}")
        if RuleKind.VECTORIZE in kinds[:-1]:
            raise RuleError(f"{name}: vectorize must be the innermost rule for {t!r}")
        loops = [r.loop for r in rs if r.loop is not None]
        if len(set(loops)) != len(loops):
            raise RuleError(f"{name}: repeated loop in rules for {t!r}")
        lanes = 1
        for r in rs:
            lanes *= r.lanes
        if lanes != op.tensor(t).size:
            raise RuleError(f"{name}: rules for {t!r} give {lanes} lanes but the register holds {op.tensor(t).size}")

    init, _ = op.split_value()
    if op.reduction_loops and not op.update:
        out = op.output
        if not isinstance(init, Load):
            raise RuleError(f"{name}: the semantics must accumulate onto a register (c + ...)")
        acc = op.tensor(init.tensor)
        if acc.shape != out.shape or acc.dtype != out.dtype or init.indices != op.store.indices:
            raise RuleError(f"{name}: accumulator {acc.name!r} and result {out.name!r} must have the same layout")


def parse_intrinsic(text: str, default_name: str = "intrinsic") -> Intrinsic:
    op, extra = parse_lines(text, extra=("rule", "mnemonic", "intrinsic"))
    validate(op)
    op = infer_types(op)
    extents = {lv.name: lv.extent for lv in op.loops}
    rules: dict[str, tuple[OperandRule, ...]] = {}
    mnemonic = None
    name = default_name
    for lineno, raw in extra:
        if m := _RULE_RE.match(raw):
            tensor = m.group(1)
            if tensor in rules:
                raise RuleError(f"line {lineno}: second rule for {tensor!r}")
            rules[tensor] = _parse_rules(lineno, m.group(2), extents)
        elif m := _MNEMONIC_RE.match(raw):
            mnemonic = m.group(1)
        elif m := _NAME_RE.match(raw):
            name = m.group(1)
        else:
            raise DSLSyntaxError(f"malformed line {raw.strip()!r}", lineno, 1)
    if mnemonic is None:
        raise DSLSyntaxError("missing mnemonic line", len(text.splitlines()) + 1, 1, 'mnemonic "..."')
    _check_rules(op, name, rules)
    ordered = tuple((t.name, rules[t.name]) for t in op.tensors if t.name in rules)
    return Intrinsic(name, op, ordered, mnemonic, op.update)


def load_intrinsic(path: str | Path) -> Intrinsic:
    path = Path(path)
    return parse_intrinsic(path.read_text(), default_name=path.stem)


BUILTIN_NAMES = ("vdot_16x4", "vdot_4x4", "wmma_16x16x16")


@functools.cache
def _builtin_text(name: str) -> str:
    return resources.files("macmap.intrinsics").joinpath(f"{name}.intr").read_text()


@functools.cache
def builtin(name: str) -> Intrinsic:
    if name not in BUILTIN_NAMES:
        raise UnknownIntrinsic(f"unknown intrinsic {name!r}; built-ins are {', '.join(BUILTIN_NAMES)}")
    return parse_intrinsic(_builtin_text(name), default_name=name)


def format_intrinsic(intr: Intrinsic) -> str:
    from macmap.tensor_ir.printer import format_compute

    lines = [f"intrinsic {intr.name}", format_compute(intr.semantics).rstrip("\n")]
    for t, rules in intr.operand_rules:
        lines.append(f"rule {t}: {' '.join(str(r) for r in rules)}")
    lines.append(f'mnemonic "{intr.target_mnemonic}"')
    return "\n".join(lines) + "\n"


def resolve(spec: str | Intrinsic, registry: dict[str, Intrinsic] | None = None) -> Intrinsic:
    """Look up a built-in name, a registry entry or an ``.intr`` file path."""
    if isinstance(spec, Intrinsic):
        return spec
    if registry and spec in registry:
        return registry[spec]
    if spec in BUILTIN_NAMES:
        return builtin(spec)
    p = Path(spec)
    if p.suffix == ".intr" or p.exists():
        return load_intrinsic(p)
    raise UnknownIntrinsic(f"unknown intrinsic {spec!r}")


def default_registry() -> dict[str, Intrinsic]:
    return {n: builtin(n) for n in BUILTIN_NAMES}


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
