"""Arithmetic expression parser/evaluator for config-defined dynamics.

One expression per state coordinate defines the update map without touching
code.  The language covers numeric literals, state variables ``x1..xn``,
``+ - * / ^``, unary minus, and the functions ``sin cos sqrt abs``.

Precedence (tightest first): ``^``, unary ``-``, ``* /``, ``+ -``.  Binary
operators of equal precedence associate left; ``^`` is right-associative but
only accepts constant integer exponents in [0, 8], so chains never arise.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

FUNCTIONS = ("sin", "cos", "sqrt", "abs")

_VAR_RE = re.compile(r"^x([1-9][0-9]*)$")
_NUM_RE = re.compile(r"(?:[0-9]+(?:\.[0-9]*)?|\.[0-9]+)(?:[eE][+-]?[0-9]+)?")
_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z_0-9]*")


class ExprError(ValueError):
    """Base class for expression language errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class UnknownIdentifierError(ExprError):
    def __init__(self, name: str, offset: int):
        super().__init__(f"unknown identifier {name!r} (offset {offset})")
        self.name = name
        self.offset = offset


class ArityError(ExprError):
    def __init__(self, name: str, offset: int):
        super().__init__(f"function {name!r} expects exactly one parenthesized argument (offset {offset})")
        self.name = name
        self.offset = offset


class NonFiniteError(ExprError):
    def __init__(self, subexpr: "Expr"):
        super().__init__(f"non-finite value produced by subexpression {format_expr(subexpr)!r}")
        self.subexpr = subexpr


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # 1-based, x1..xn


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * /
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Pow:
    base: "Expr"
    exponent: int  # constant integer in [0, 8]


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Expr"


Expr = Num | Var | Neg | BinOp | Pow | Call


def _tokenize(source: str):
    tokens = []
    i = 0
    n = len(source)
    while i < n:
        ch = source[i]
        if ch.isspace():
            i += 1
            continue
        if ch in "+-*/^()":
            tokens.append((ch, ch, i))
            i += 1
            continue
        m = _NUM_RE.match(source, i)
        if m:
            tokens.append(("num", float(m.group()), i))
            i = m.end()
            continue
        m = _IDENT_RE.match(source, i)
        if m:
            tokens.append(("ident", m.group(), i))
            i = m.end()
            continue
        raise ExprSyntaxError(f"unexpected character {ch!r}", i)
    tokens.append(("end", None, n))
    return tokens


class _Parser:
    def __init__(self, source: str):
        self.source = source
        self.tokens = _tokenize(source)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        if tok[0] != "end":
            self.pos += 1
        return tok

    def expect(self, kind: str):
        tok = self.peek()
        if tok[0] != kind:
            raise ExprSyntaxError(f"expected {kind!r}", tok[2])
        return self.advance()

    def parse(self) -> Expr:
        expr = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise ExprSyntaxError(f"unexpected token {tok[1]!r}", tok[2])
        return expr

    def expr(self) -> Expr:
        node = self.term()
        while self.peek()[0] in ("+", "-"):
            op = self.advance()[0]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.peek()[0] in ("*", "/"):
            op = self.advance()[0]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Expr:
        if self.peek()[0] == "-":
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek()[0] == "^":
            self.advance()
            tok = self.peek()
            if tok[0] != "num" or tok[1] != int(tok[1]) or not 0 <= tok[1] <= 8:
                raise ExprSyntaxError("exponent must be an integer literal in [0, 8]", tok[2])
            self.advance()
            return Pow(base, int(tok[1]))
        return base

    def atom(self) -> Expr:
        tok = self.peek()
        if tok[0] == "num":
            self.advance()
            return Num(float(tok[1]))
        if tok[0] == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        if tok[0] == "ident":
            self.advance()
            name = tok[1]
            if name in FUNCTIONS:
                if self.peek()[0] != "(":
                    raise ArityError(name, self.peek()[2])
                self.advance()
                arg = self.expr()
                self.expect(")")
                return Call(name, arg)
            m = _VAR_RE.match(name)
            if m:
                return Var(int(m.group(1)))
            raise UnknownIdentifierError(name, tok[2])
        raise ExprSyntaxError(f"expected a value, got {tok[1]!r}" if tok[0] != "end" else "unexpected end of input", tok[2])


def parse(source: str) -> Expr:
    """Parse an expression string into an immutable AST."""
    return _Parser(source).parse()


def max_var_index(expr: Expr) -> int:
    """Largest state-variable index referenced (0 if none)."""
    if isinstance(expr, Var):
        return expr.index
    if isinstance(expr, Num):
        return 0
    if isinstance(expr, Neg):
        return max_var_index(expr.operand)
    if isinstance(expr, BinOp):
        return max(max_var_index(expr.left), max_var_index(expr.right))
    if isinstance(expr, Pow):
        return max_var_index(expr.base)
    return max_var_index(expr.arg)


# precedence levels used by the printer; higher binds tighter
_PREC_ADD, _PREC_MUL, _PREC_NEG, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5


def _prec(expr: Expr) -> int:
    if isinstance(expr, BinOp):
        return _PREC_ADD if expr.op in "+-" else _PREC_MUL
    if isinstance(expr, Neg):
        return _PREC_NEG
    if isinstance(expr, Pow):
        return _PREC_POW
    return _PREC_ATOM


def format_expr(expr: Expr) -> str:
    """Render an AST back to a string; parse(format_expr(e)) equals e."""
    if isinstance(expr, Num):
        return repr(expr.value)
    if isinstance(expr, Var):
        return f"x{expr.index}"
    if isinstance(expr, Neg):
        inner = format_expr(expr.operand)
        if _prec(expr.operand) < _PREC_NEG:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(expr, Pow):
        base = format_expr(expr.base)
        if _prec(expr.base) <= _PREC_POW:
            base = f"({base})"
        return f"{base}^{expr.exponent}"
    if isinstance(expr, Call):
        return f"{expr.func}({format_expr(expr.arg)})"
    left = format_expr(expr.left)
    right = format_expr(expr.right)
    if _prec(expr.left) < _prec(expr):
        left = f"({left})"
    # equal precedence on the right needs parens to keep left associativity
    if _prec(expr.right) <= _prec(expr):
        right = f"({right})"
    return f"{left} {expr.op} {right}"


_FUNC_SCALAR = {"sin": math.sin, "cos": math.cos, "sqrt": math.sqrt, "abs": abs}
_FUNC_BATCH = {"sin": np.sin, "cos": np.cos, "sqrt": np.sqrt, "abs": np.abs}


def evaluate(expr: Expr, x) -> float:
    """Evaluate at a single state vector using IEEE double arithmetic.

    Raises :class:`NonFiniteError` carrying the deepest offending
    subexpression when the result stops being finite.
    """
    x = np.asarray(x, dtype=float)
    top = max_var_index(expr)
    if top > x.shape[0]:
        raise ValueError(f"expression references x{top} but the state has dim {x.shape[0]}")
    return _eval_scalar(expr, x)


def _eval_scalar(expr: Expr, x: np.ndarray) -> float:
    if isinstance(expr, Num):
        return expr.value
    if isinstance(expr, Var):
        return float(x[expr.index - 1])
    if isinstance(expr, Neg):
        return -_eval_scalar(expr.operand, x)
    if isinstance(expr, BinOp):
        a = _eval_scalar(expr.left, x)
        b = _eval_scalar(expr.right, x)
        if expr.op == "+":
            v = a + b
        elif expr.op == "-":
            v = a - b
        elif expr.op == "*":
            v = a * b
        else:
            v = a / b if b != 0.0 else math.inf if a > 0 else -math.inf if a < 0 else math.nan
    elif isinstance(expr, Pow):
        v = _eval_scalar(expr.base, x) ** expr.exponent
    else:
        a = _eval_scalar(expr.arg, x)
        try:
            v = _FUNC_SCALAR[expr.func](a)
        except ValueError:
            v = math.nan
    if not math.isfinite(v):
        raise NonFiniteError(expr)
    return float(v)


def evaluate_batch(expr: Expr, X: np.ndarray) -> np.ndarray:
    """Vectorized evaluation over an (m, n) array of states."""
    X = np.asarray(X, dtype=float)
    top = max_var_index(expr)
    if top > X.shape[1]:
        raise ValueError(f"expression references x{top} but states have dim {X.shape[1]}")
    with np.errstate(divide="ignore", invalid="ignore"):
        return _eval_batch(expr, X)


def _eval_batch(expr: Expr, X: np.ndarray) -> np.ndarray:
    if isinstance(expr, Num):
        return np.full(X.shape[0], expr.value)
    if isinstance(expr, Var):
        return X[:, expr.index - 1].copy()
    if isinstance(expr, Neg):
        return -_eval_batch(expr.operand, X)
    if isinstance(expr, BinOp):
        a = _eval_batch(expr.left, X)
        b = _eval_batch(expr.right, X)
        if expr.op == "+":
            v = a + b
        elif expr.op == "-":
            v = a - b
        elif expr.op == "*":
            v = a * b
        else:
            v = a / b
    elif isinstance(expr, Pow):
        v = _eval_batch(expr.base, X) ** expr.exponent
    else:
        v = _FUNC_BATCH[expr.func](_eval_batch(expr.arg, X))
    if not np.all(np.isfinite(v)):
        raise NonFiniteError(expr)
    return v
