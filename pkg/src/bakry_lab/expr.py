"""Field-expression mini-language.

A small recursive-descent parser for scalar expressions over grid
coordinates, time and a solution value ``u``.  Expressions are the only
user extensibility point of the laboratory: potentials, vector-field
components, source terms and nonlinearities are all written in it.

Grammar (lowest to highest precedence)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?          # right associative
    atom   := NUMBER | IDENT | FUNC '(' expr ')' | '(' expr ')'

Errors carry the byte offset of the offending token.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Union

import numpy as np

__all__ = [
    "ExprError",
    "ExprSyntaxError",
    "ExprEvalError",
    "FieldExpr",
    "Num",
    "Var",
    "Neg",
    "BinOp",
    "Call",
    "parse_expr",
    "to_text",
    "evaluate",
    "differentiate",
    "free_symbols",
    "FUNCTIONS",
    "DEFAULT_VARIABLES",
    "CONSTANTS",
]

MAX_BYTES = 64 * 1024

FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "sinh": np.sinh,
    "cosh": np.cosh,
    "tanh": np.tanh,
    "atan": np.arctan,
    "abs": np.abs,
}

CONSTANTS = {"pi": math.pi}

DEFAULT_VARIABLES = frozenset({"x", "y", "z", "theta", "phi", "chi", "t", "u", "r"})


class ExprError(ValueError):
    """Base class for expression errors; ``offset`` is a byte offset or None."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        where = f" at byte {offset}" if offset is not None else ""
        super().__init__(f"{message}{where}")


class ExprSyntaxError(ExprError):
    pass


class ExprEvalError(ExprError):
    pass


# AST ------------------------------------------------------------------------
# ``pos`` is excluded from equality so that round trips compare structure only.


@dataclass(frozen=True)
class Num:
    value: float
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Var:
    name: str
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Neg:
    operand: "Node"
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"
    pos: int = field(default=0, compare=False)


Node = Union[Num, Var, Neg, BinOp, Call]


@dataclass(frozen=True)
class FieldExpr:
    """A parsed expression together with its source text."""

    root: Node
    text: str = field(default="", compare=False)

    def __call__(self, **env) -> np.ndarray | float:
        return evaluate(self, env)

    def __str__(self) -> str:
        return to_text(self)

    def diff(self, var: str) -> "FieldExpr":
        return differentiate(self, var)

    @property
    def symbols(self) -> frozenset[str]:
        return free_symbols(self)


# Lexer ----------------------------------------------------------------------


@dataclass(frozen=True)
class _Tok:
    kind: str  # "num", "ident", "op", "end"
    text: str
    pos: int


def _tokenize(data: bytes) -> list[_Tok]:
    toks: list[_Tok] = []
    i, n = 0, len(data)
    while i < n:
        c = data[i : i + 1]
        if c in b" \t\r\n":
            i += 1
        elif c.isdigit() or (c == b"." and i + 1 < n and data[i + 1 : i + 2].isdigit()):
            j = i
            while j < n and (data[j : j + 1].isdigit() or data[j : j + 1] == b"."):
                j += 1
            if j < n and data[j : j + 1] in (b"e", b"E"):
                k = j + 1
                if k < n and data[k : k + 1] in (b"+", b"-"):
                    k += 1
                if k < n and data[k : k + 1].isdigit():
                    while k < n and data[k : k + 1].isdigit():
                        k += 1
                    j = k
            text = data[i:j].decode()
            try:
                float(text)
            except ValueError:
                raise ExprSyntaxError(f"malformed number {text!r}", i) from None
            toks.append(_Tok("num", text, i))
            i = j
        elif c.isalpha() or c == b"_":
            j = i
            while j < n and (data[j : j + 1].isalnum() or data[j : j + 1] == b"_"):
                j += 1
            toks.append(_Tok("ident", data[i:j].decode(), i))
            i = j
        elif c in b"+-*/^()":
            toks.append(_Tok("op", c.decode(), i))
            i += 1
        else:
            raise ExprSyntaxError(f"unexpected character {c!r}", i)
    toks.append(_Tok("end", "", n))
    return toks


# Parser ---------------------------------------------------------------------


class _Parser:
    def __init__(self, toks: list[_Tok], variables: frozenset[str]):
        self.toks = toks
        self.i = 0
        self.variables = variables

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def _eat(self, text: str) -> _Tok:
        tok = self.tok
        if tok.kind != "op" or tok.text != text:
            found = tok.text or "end of input"
            raise ExprSyntaxError(f"expected {text!r}, found {found!r}", tok.pos)
        self.i += 1
        return tok

    def parse(self) -> Node:
        node = self.expr()
        if self.tok.kind != "end":
            raise ExprSyntaxError(f"unexpected token {self.tok.text!r}", self.tok.pos)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            tok = self.tok
            self.i += 1
            node = BinOp(tok.text, node, self.term(), tok.pos)
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            tok = self.tok
            self.i += 1
            node = BinOp(tok.text, node, self.unary(), tok.pos)
        return node

    def unary(self) -> Node:
        if self.tok.kind == "op" and self.tok.text == "-":
            tok = self.tok
            self.i += 1
            return Neg(self.unary(), tok.pos)
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.tok.kind == "op" and self.tok.text == "^":
            tok = self.tok
            self.i += 1
            return BinOp("^", base, self.unary(), tok.pos)
        return base

    def atom(self) -> Node:
        tok = self.tok
        if tok.kind == "num":
            self.i += 1
            value = float(tok.text)
            if not math.isfinite(value):
                raise ExprSyntaxError(f"literal {tok.text!r} overflows", tok.pos)
            return Num(value, tok.pos)
        if tok.kind == "ident":
            self.i += 1
            name = tok.text
            if name in FUNCTIONS:
                if not (self.tok.kind == "op" and self.tok.text == "("):
                    raise ExprSyntaxError(f"function {name!r} takes exactly one argument", tok.pos)
                self._eat("(")
                if self.tok.kind == "op" and self.tok.text == ")":
                    raise ExprSyntaxError(f"function {name!r} takes exactly one argument", tok.pos)
                arg = self.expr()
                if not (self.tok.kind == "op" and self.tok.text == ")"):
                    raise ExprSyntaxError(
                        f"function {name!r} takes exactly one argument", self.tok.pos
                    )
                self._eat(")")
                return Call(name, arg, tok.pos)
            if name in CONSTANTS:
                return Num(CONSTANTS[name], tok.pos)
            if name not in self.variables:
                raise ExprSyntaxError(f"unknown identifier {name!r}", tok.pos)
            return Var(name, tok.pos)
        if tok.kind == "op" and tok.text == "(":
            self.i += 1
            node = self.expr()
            self._eat(")")
            return node
        found = tok.text or "end of input"
        raise ExprSyntaxError(f"unexpected {found!r}", tok.pos)


def parse_expr(text: str | FieldExpr, variables=None) -> FieldExpr:
    """Parse ``text`` into a :class:`FieldExpr`.

    Parameters
    ----------
    text : str
        Expression source, at most 64 KiB of UTF-8.
    variables : iterable of str, optional
        Identifiers accepted as variables.  Defaults to coordinate names,
        ``t``, ``u`` and ``r``.

    Raises
    ------
    ExprSyntaxError
        On malformed input, unknown identifiers or wrong function arity.
    """
    if isinstance(text, FieldExpr):
        return text
    if isinstance(text, (int, float)):
        text = repr(float(text))
    data = text.encode("utf-8")
    if len(data) > MAX_BYTES:
        raise ExprSyntaxError(f"expression longer than {MAX_BYTES} bytes", MAX_BYTES)
    allowed = DEFAULT_VARIABLES if variables is None else frozenset(variables)
    root = _Parser(_tokenize(data), allowed).parse()
    return FieldExpr(root, text)


# Printing -------------------------------------------------------------------


def _print(node: Node) -> str:
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return f"(-{_print(node.operand)})"
    if isinstance(node, BinOp):
        return f"({_print(node.left)} {node.op} {_print(node.right)})"
    if isinstance(node, Call):
        return f"{node.func}({_print(node.arg)})"
    raise TypeError(node)


def to_text(expr: FieldExpr | Node) -> str:
    """Fully parenthesised source that reparses to the same tree."""
    return _print(expr.root if isinstance(expr, FieldExpr) else expr)


# Evaluation -----------------------------------------------------------------


def _eval(node: Node, env: Mapping[str, object]):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        try:
            return env[node.name]
        except KeyError:
            raise ExprEvalError(f"no value bound for {node.name!r}", node.pos) from None
    if isinstance(node, Neg):
        return -_eval(node.operand, env)
    if isinstance(node, Call):
        arg = _eval(node.arg, env)
        a = np.asarray(arg, dtype=float)
        if node.func == "log" and np.any(a <= 0):
            raise ExprEvalError("log of nonpositive value", node.pos)
        if node.func == "sqrt" and np.any(a < 0):
            raise ExprEvalError("sqrt of negative value", node.pos)
        with np.errstate(over="ignore"):
            out = FUNCTIONS[node.func](arg)
        if not np.all(np.isfinite(out)):
            raise ExprEvalError(f"{node.func} produced a non-finite value", node.pos)
        return out
    left = _eval(node.left, env)
    right = _eval(node.right, env)
    if node.op == "+":
        return left + right
    if node.op == "-":
        return left - right
    if node.op == "*":
        return left * right
    if node.op == "/":
        if np.any(np.asarray(right) == 0):
            raise ExprEvalError("division by zero", node.pos)
        return left / right
    with np.errstate(all="ignore"):
        out = np.power(np.asarray(left, dtype=float), right)
    if not np.all(np.isfinite(out)):
        raise ExprEvalError("power produced a non-finite value", node.pos)
    return out if np.ndim(out) else float(out)


def evaluate(expr: FieldExpr | str, env: Mapping[str, object]):
    """Evaluate an expression with numpy broadcasting over ``env`` values."""
    expr = parse_expr(expr)
    return _eval(expr.root, env)


# Symbolic differentiation ---------------------------------------------------


def _is_num(node: Node, value: float | None = None) -> bool:
    return isinstance(node, Num) and (value is None or node.value == value)


def _add(a: Node, b: Node) -> Node:
    if _is_num(a, 0.0):
        return b
    if _is_num(b, 0.0):
        return a
    if _is_num(a) and _is_num(b):
        return Num(a.value + b.value)
    return BinOp("+", a, b)


def _sub(a: Node, b: Node) -> Node:
    if _is_num(b, 0.0):
        return a
    if _is_num(a, 0.0):
        return _neg(b)
    if _is_num(a) and _is_num(b):
        return Num(a.value - b.value)
    return BinOp("-", a, b)


def _mul(a: Node, b: Node) -> Node:
    if _is_num(a, 0.0) or _is_num(b, 0.0):
        return Num(0.0)
    if _is_num(a, 1.0):
        return b
    if _is_num(b, 1.0):
        return a
    if _is_num(a) and _is_num(b):
        return Num(a.value * b.value)
    return BinOp("*", a, b)


def _div(a: Node, b: Node) -> Node:
    if _is_num(a, 0.0):
        return Num(0.0)
    if _is_num(b, 1.0):
        return a
    return BinOp("/", a, b)


def _neg(a: Node) -> Node:
    if _is_num(a):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.operand
    return Neg(a)


def _pow(a: Node, b: Node) -> Node:
    if _is_num(b, 1.0):
        return a
    if _is_num(b, 0.0):
        return Num(1.0)
    return BinOp("^", a, b)


def _d(node: Node, var: str) -> Node:
    if isinstance(node, Num):
        return Num(0.0)
    if isinstance(node, Var):
        return Num(1.0 if node.name == var else 0.0)
    if isinstance(node, Neg):
        return _neg(_d(node.operand, var))
    if isinstance(node, BinOp):
        a, b = node.left, node.right
        da, db = _d(a, var), _d(b, var)
        if node.op == "+":
            return _add(da, db)
        if node.op == "-":
            return _sub(da, db)
        if node.op == "*":
            return _add(_mul(da, b), _mul(a, db))
        if node.op == "/":
            return _div(_sub(_mul(da, b), _mul(a, db)), _pow(b, Num(2.0)))
        # a^b
        if _is_num(db, 0.0):
            return _mul(_mul(b, _pow(a, _sub(b, Num(1.0)))), da)
        return _mul(node, _add(_mul(db, Call("log", a)), _div(_mul(b, da), a)))
    if isinstance(node, Call):
        a = node.arg
        da = _d(a, var)
        if _is_num(da, 0.0):
            return Num(0.0)
        f = node.func
        if f == "sin":
            outer = Call("cos", a)
        elif f == "cos":
            outer = _neg(Call("sin", a))
        elif f == "tan":
            outer = _add(Num(1.0), _pow(Call("tan", a), Num(2.0)))
        elif f == "exp":
            outer = Call("exp", a)
        elif f == "log":
            outer = _div(Num(1.0), a)
        elif f == "sqrt":
            outer = _div(Num(0.5), Call("sqrt", a))
        elif f == "sinh":
            outer = Call("cosh", a)
        elif f == "cosh":
            outer = Call("sinh", a)
        elif f == "tanh":
            outer = _sub(Num(1.0), _pow(Call("tanh", a), Num(2.0)))
        elif f == "atan":
            outer = _div(Num(1.0), _add(Num(1.0), _pow(a, Num(2.0))))
        elif f == "abs":
            outer = _div(a, Call("abs", a))
        else:  # pragma: no cover - parser rejects unknown names
            raise ExprError(f"cannot differentiate {f!r}")
        return _mul(outer, da)
    raise TypeError(node)


def differentiate(expr: FieldExpr | str, var: str) -> FieldExpr:
    """Exact derivative of ``expr`` with respect to ``var``."""
    expr = parse_expr(expr)
    root = _d(expr.root, var)
    return FieldExpr(root, to_text(root))


def free_symbols(expr: FieldExpr | Node) -> frozenset[str]:
    node = expr.root if isinstance(expr, FieldExpr) else expr
    if isinstance(node, Var):
        return frozenset({node.name})
    if isinstance(node, Num):
        return frozenset()
    if isinstance(node, Neg):
        return free_symbols(node.operand)
    if isinstance(node, Call):
        return free_symbols(node.arg)
    return free_symbols(node.left) | free_symbols(node.right)
