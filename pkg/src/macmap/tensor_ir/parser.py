"""Parser for the ``.tdsl`` text form of a ComputeOp.

::

    tensor <name> : <dtype> [ <extent> (, <extent>)* ] (input|output)
    loop   <name> : (dp|red) <extent>
    <out>[idx, ...] (=|+=) <expr>

``<expr>`` accepts integer/float literals, ``cast<dtype>(e)`` (or the
shorthand ``dtype(e)``), ``e*e``, ``e+e``, loads ``T[affine, ...]`` and
loop names. ``#`` starts a comment.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from macmap.dtypes import DType, i32, parse_dtype
from macmap.errors import DSLSyntaxError
from macmap.tensor_ir.expr import (
    Binary,
    Cast,
    ComputeOp,
    Expr,
    FloatConst,
    IntConst,
    Load,
    LoopKind,
    LoopRef,
    LoopVar,
    Opcode,
    Role,
    Store,
    TensorDecl,
)

_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t]+)
  | (?P<float>\d+\.\d*(?:[eE][-+]?\d+)?|\d+[eE][-+]?\d+)
  | (?P<int>\d+)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<string>"[^"]*")
  | (?P<op>\+=|[\[\](),:+*<>=\-])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True, slots=True)
class Token:
    kind: str
    text: str
    line: int
    col: int


def tokenize(line: str, lineno: int) -> list[Token]:
    code = line.split("#", 1)[0]
    out: list[Token] = []
    pos = 0
    while pos < len(code):
        m = _TOKEN.match(code, pos)
        if m is None:
            raise DSLSyntaxError(f"unexpected character {code[pos]!r}", lineno, pos + 1)
        kind = m.lastgroup
        if kind != "ws":
            out.append(Token(kind, m.group(), lineno, pos + 1))
        pos = m.end()
    out.append(Token("eol", "", lineno, len(code) + 1))
    return out


class _Cursor:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.tokens[min(self.i + k, len(self.tokens) - 1)]

    def fail(self, expected: str) -> DSLSyntaxError:
        t = self.tok
        got = t.text or "end of line"
        return DSLSyntaxError(f"unexpected {got!r}", t.line, t.col, expected)

    def accept(self, text: str) -> bool:
        if self.tok.text == text and self.tok.kind in ("op", "name"):
            self.i += 1
            return True
        return False

    def expect(self, text: str) -> Token:
        t = self.tok
        if not self.accept(text):
            raise self.fail(repr(text))
        return t

    def expect_kind(self, kind: str, what: str) -> Token:
        t = self.tok
        if t.kind != kind:
            raise self.fail(what)
        self.i += 1
        return t

    def end(self) -> None:
        if self.tok.kind != "eol":
            raise self.fail("end of line")


def _is_dtype_name(text: str) -> bool:
    try:
        parse_dtype(text)
    except ValueError:
        return False
    return True


class _ExprParser:
    def __init__(self, cur: _Cursor, tensors: dict[str, TensorDecl]):
        self.cur = cur
        self.tensors = tensors

    def expr(self) -> Expr:
        node = self.term()
        while self.cur.accept("+"):
            node = Binary(Opcode.ADD, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.atom()
        while self.cur.accept("*"):
            node = Binary(Opcode.MUL, node, self.atom())
        return node

    def atom(self) -> Expr:
        cur = self.cur
        t = cur.tok
        if cur.accept("("):
            node = self.expr()
            cur.expect(")")
            return node
        if cur.accept("-"):
            n = cur.tok
            if n.kind == "int":
                cur.i += 1
                return IntConst(-int(n.text))
            if n.kind == "float":
                cur.i += 1
                return FloatConst(-float(n.text))
            raise cur.fail("numeric literal")
        if t.kind == "int":
            cur.i += 1
            return IntConst(int(t.text))
        if t.kind == "float":
            cur.i += 1
            return FloatConst(float(t.text))
        if t.kind == "name":
            if t.text == "cast" and cur.peek().text == "<":
                cur.i += 2
                dt = self.dtype()
                cur.expect(">")
                cur.expect("(")
                child = self.expr()
                cur.expect(")")
                return Cast(dt, child)
            if cur.peek().text == "(" and _is_dtype_name(t.text):
                cur.i += 2
                child = self.expr()
                cur.expect(")")
                return Cast(parse_dtype(t.text), child)
            if cur.peek().text == "[":
                cur.i += 2
                idx = [self.index()]
                while cur.accept(","):
                    idx.append(self.index())
                cur.expect("]")
                decl = self.tensors.get(t.text)
                return Load(t.text, tuple(idx), decl.dtype if decl else None)
            cur.i += 1
            return LoopRef(t.text)
        raise cur.fail("expression")

    def dtype(self) -> DType:
        t = self.cur.expect_kind("name", "dtype")
        try:
            return parse_dtype(t.text)
        except ValueError:
            raise DSLSyntaxError(f"unknown dtype {t.text!r}", t.line, t.col, "dtype") from None

    def index(self) -> Expr:
        node = self.index_term()
        while self.cur.accept("+"):
            node = Binary(Opcode.ADD, node, self.index_term(), i32)
        return node

    def index_term(self) -> Expr:
        node = self.index_atom()
        while self.cur.accept("*"):
            node = Binary(Opcode.MUL, node, self.index_atom(), i32)
        return node

    def index_atom(self) -> Expr:
        cur = self.cur
        t = cur.tok
        if cur.accept("("):
            node = self.index()
            cur.expect(")")
            return node
        if cur.accept("-"):
            n = cur.expect_kind("int", "integer literal")
            return IntConst(-int(n.text), i32)
        if t.kind == "int":
            cur.i += 1
            return IntConst(int(t.text), i32)
        if t.kind == "name":
            cur.i += 1
            return LoopRef(t.text)
        raise cur.fail("index expression")


def _int(cur: _Cursor, what: str) -> int:
    return int(cur.expect_kind("int", what).text)


def parse_lines(text: str, extra: tuple[str, ...] = ()) -> tuple[ComputeOp, list[tuple[int, str]]]:
    """Parse a ComputeOp; lines starting with a keyword in ``extra`` are returned raw."""
    tensors: dict[str, TensorDecl] = {}
    decls: list[TensorDecl] = []
    loops: list[LoopVar] = []
    store: Store | None = None
    update = False
    leftovers: list[tuple[int, str]] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        toks = tokenize(raw, lineno)
        if toks[0].kind == "eol":
            continue
        head = toks[0]
        if head.kind == "name" and head.text in extra:
            leftovers.append((lineno, raw))
            continue
        cur = _Cursor(toks)
        if head.text == "tensor" and toks[1].kind == "name" and toks[2].text == ":":
            cur.i = 1
            name = cur.expect_kind("name", "tensor name").text
            cur.expect(":")
            dt = _ExprParser(cur, tensors).dtype()
            cur.expect("[")
            shape = [_int(cur, "extent")]
            while cur.accept(","):
                shape.append(_int(cur, "extent"))
            cur.expect("]")
            role_tok = cur.expect_kind("name", "'input' or 'output'")
            if role_tok.text not in ("input", "output"):
                raise DSLSyntaxError(
                    f"unexpected {role_tok.text!r}", role_tok.line, role_tok.col, "'input' or 'output'"
                )
            cur.end()
            if any(e <= 0 for e in shape):
                raise DSLSyntaxError("extents must be positive", head.line, head.col)
            decl = TensorDecl(name, tuple(shape), dt, Role(role_tok.text))
            decls.append(decl)
            tensors.setdefault(name, decl)
        elif head.text == "loop" and toks[1].kind == "name" and toks[2].text == ":":
            cur.i = 1
            name = cur.expect_kind("name", "loop name").text
            cur.expect(":")
            kind_tok = cur.expect_kind("name", "'dp' or 'red'")
            if kind_tok.text not in ("dp", "red"):
                raise DSLSyntaxError(f"unexpected {kind_tok.text!r}", kind_tok.line, kind_tok.col, "'dp' or 'red'")
            extent = _int(cur, "loop extent")
            cur.end()
            if extent <= 0:
                raise DSLSyntaxError("loop extent must be positive", head.line, head.col)
            loops.append(LoopVar(name, extent, LoopKind(kind_tok.text)))
        else:
            if store is not None:
                raise DSLSyntaxError("only one store statement is allowed", head.line, head.col)
            name = cur.expect_kind("name", "'tensor', 'loop' or a store").text
            cur.expect("[")
            ep = _ExprParser(cur, tensors)
            idx = [ep.index()]
            while cur.accept(","):
                idx.append(ep.index())
            cur.expect("]")
            if cur.accept("+="):
                update = True
            elif not cur.accept("="):
                raise cur.fail("'=' or '+='")
            value = ep.expr()
            cur.end()
            if update:
                out = tensors.get(name)
                value = Binary(Opcode.ADD, Load(name, tuple(idx), out.dtype if out else None), value)
            store = Store(name, tuple(idx), value)

    if store is None:
        raise DSLSyntaxError("missing store statement", len(text.splitlines()) + 1, 1, "a store")
    op = ComputeOp(tuple(decls), tuple(loops), store, update)
    return op, leftovers


def parse_compute(text: str) -> ComputeOp:
    """Parse, validate and type-infer a ComputeOp."""
    from macmap.tensor_ir.typecheck import infer_types
    from macmap.tensor_ir.validate import validate

    op, rest = parse_lines(text)
    if rest:  # pragma: no cover - parse_lines only defers extra keywords
        raise DSLSyntaxError("unexpected line", rest[0][0], 1)
    validate(op)
    return infer_types(op)
