"""Scalar functions of time: a small recursive-descent parser and evaluator.

Grammar (``^`` binds tightest, then unary minus, then ``* /``, then ``+ -``)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' intexp)*
    intexp := ['-'] INT | '(' ['-'] INT ')'
    atom   := NUMBER | 't' | NAME '(' expr (',' expr)* ')' | '(' expr ')'

Only integer literal exponents are accepted, so evaluation never leaves the
reals. Trees are immutable; :func:`to_source` prints a string that re-parses
to a structurally identical tree.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

__all__ = [
    "Expression",
    "Num",
    "Var",
    "Neg",
    "BinOp",
    "Pow",
    "Call",
    "ExprError",
    "ExprSyntaxError",
    "UnknownIdentifierError",
    "EvalDomainError",
    "parse",
    "evaluate",
    "evaluate_array",
    "to_source",
    "is_constant",
    "FUNCTIONS",
]


class ExprError(ValueError):
    pass


class ExprSyntaxError(ExprError):
    def __init__(self, source: str, offset: int, expected: str):
        self.source = source
        self.offset = offset
        self.expected = expected
        where = "end of input" if offset >= len(source.encode()) else f"byte {offset}"
        super().__init__(f"syntax error at {where}: expected {expected} in {source!r}")


class UnknownIdentifierError(ExprSyntaxError):
    def __init__(self, source: str, offset: int, name: str):
        self.name = name
        ExprError.__init__(
            self, f"unknown identifier {name!r} at byte {offset} in {source!r}"
        )
        self.source = source
        self.offset = offset
        self.expected = "t or a known function"


class EvalDomainError(ExprError):
    """Raised when a subexpression leaves the real domain (or overflows)."""

    def __init__(self, message: str, node: "Expression", t=None):
        self.node = node
        self.t = t
        at = "" if t is None else f" at t={t!r}"
        super().__init__(f"{message} in {to_source(node)!r}{at}")


# name -> (arity, scalar impl, array impl); arity None means two or more
FUNCTIONS: dict[str, tuple[int | None, Callable, Callable]] = {
    "sin": (1, math.sin, np.sin),
    "cos": (1, math.cos, np.cos),
    "tan": (1, math.tan, np.tan),
    "exp": (1, math.exp, np.exp),
    "sqrt": (1, math.sqrt, np.sqrt),
    "abs": (1, abs, np.abs),
    "min": (None, min, None),
    "max": (None, max, None),
}


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str = "t"


@dataclass(frozen=True)
class Neg:
    operand: "Expression"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expression"
    right: "Expression"


@dataclass(frozen=True)
class Pow:
    base: "Expression"
    exponent: int


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


Expression = Union[Num, Var, Neg, BinOp, Pow, Call]


# ---------------------------------------------------------------- parsing

_TOKEN = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),])"
    r")"
)


class _Parser:
    def __init__(self, source: str):
        self.source = source
        self.tokens: list[tuple[str, str, int]] = []
        pos = 0
        n = len(source)
        while True:
            while pos < n and source[pos].isspace():
                pos += 1
            if pos >= n:
                break
            m = _TOKEN.match(source, pos)
            if m is None or m.end() == pos:
                raise ExprSyntaxError(source, self._byte(pos), "a number, name or operator")
            kind = m.lastgroup
            start = m.start(kind)
            self.tokens.append((kind, m.group(kind), start))
            pos = m.end()
        self.tokens.append(("end", "", n))
        self.i = 0

    def _byte(self, pos: int) -> int:
        return len(self.source[:pos].encode())

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.i]

    def advance(self) -> tuple[str, str, int]:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, expected: str):
        raise ExprSyntaxError(self.source, self._byte(self.peek()[2]), expected)

    def expect(self, op: str):
        kind, text, _ = self.peek()
        if kind != "op" or text != op:
            self.fail(repr(op))
        self.advance()

    def at_op(self, *ops: str) -> bool:
        kind, text, _ = self.peek()
        return kind == "op" and text in ops

    def parse(self) -> Expression:
        if self.peek()[0] == "end":
            self.fail("an expression")
        node = self.expr()
        if self.peek()[0] != "end":
            self.fail("an operator or end of input")
        return node

    def expr(self) -> Expression:
        node = self.term()
        while self.at_op("+", "-"):
            op = self.advance()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Expression:
        node = self.unary()
        while self.at_op("*", "/"):
            op = self.advance()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Expression:
        if self.at_op("-"):
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Expression:
        node = self.atom()
        while self.at_op("^"):
            self.advance()
            node = Pow(node, self.int_exponent())
        return node

    def int_exponent(self) -> int:
        paren = self.at_op("(")
        if paren:
            self.advance()
        sign = 1
        if self.at_op("-"):
            self.advance()
            sign = -1
        kind, text, _ = self.peek()
        if kind != "num" or not text.isdigit():
            self.fail("an integer literal exponent")
        self.advance()
        if paren:
            self.expect(")")
        return sign * int(text)

    def atom(self) -> Expression:
        kind, text, pos = self.peek()
        if kind == "num":
            self.advance()
            return Num(float(text))
        if kind == "name":
            self.advance()
            if text == "t":
                return Var()
            if text not in FUNCTIONS:
                raise UnknownIdentifierError(self.source, self._byte(pos), text)
            arity = FUNCTIONS[text][0]
            self.expect("(")
            args = [self.expr()]
            while self.at_op(","):
                self.advance()
                args.append(self.expr())
            self.expect(")")
            if arity is not None and len(args) != arity:
                raise ExprSyntaxError(
                    self.source, self._byte(pos), f"{arity} argument(s) to {text}"
                )
            if arity is None and len(args) < 2:
                raise ExprSyntaxError(
                    self.source, self._byte(pos), f"at least 2 arguments to {text}"
                )
            return Call(text, tuple(args))
        if kind == "op" and text == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        self.fail("a number, 't', a function call or '('")


def parse(source: str) -> Expression:
    """Parse ``source`` into an expression tree.

    >>> evaluate(parse("2+3*4"), 0.0)
    14.0
    """
    if not isinstance(source, str) or not source.strip():
        raise ExprSyntaxError(source or "", 0, "a non-empty expression")
    return _Parser(source).parse()


# --------------------------------------------------------------- printing

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _prec(node: Expression) -> int:
    if isinstance(node, BinOp):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return 3
    if isinstance(node, Pow):
        return 4
    return 5


def to_source(node: Expression) -> str:
    """Print ``node`` with the minimal parentheses needed to re-parse it."""
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, Var):
        return "t"
    if isinstance(node, Neg):
        inner = to_source(node.operand)
        return "-" + (f"({inner})" if _prec(node.operand) < 3 else inner)
    if isinstance(node, BinOp):
        p = _PREC[node.op]
        left = to_source(node.left)
        right = to_source(node.right)
        if _prec(node.left) < p:
            left = f"({left})"
        if _prec(node.right) <= p:
            right = f"({right})"
        return f"{left}{node.op}{right}"
    if isinstance(node, Pow):
        base = to_source(node.base)
        if _prec(node.base) < 4:
            base = f"({base})"
        return f"{base}^{node.exponent}"
    if isinstance(node, Call):
        return f"{node.name}({', '.join(to_source(a) for a in node.args)})"
    raise TypeError(f"not an expression node: {node!r}")


def is_constant(node: Expression) -> bool:
    """True when ``node`` does not depend on ``t``."""
    if isinstance(node, Num):
        return True
    if isinstance(node, Var):
        return False
    if isinstance(node, Neg):
        return is_constant(node.operand)
    if isinstance(node, BinOp):
        return is_constant(node.left) and is_constant(node.right)
    if isinstance(node, Pow):
        return is_constant(node.base)
    return all(is_constant(a) for a in node.args)


# ------------------------------------------------------------- evaluation

def evaluate(node: Expression, t: float) -> float:
    """Evaluate ``node`` at time ``t`` (radians for trig functions)."""
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return float(t)
    if isinstance(node, Neg):
        return -evaluate(node.operand, t)
    if isinstance(node, BinOp):
        a = evaluate(node.left, t)
        b = evaluate(node.right, t)
        if node.op == "+":
            r = a + b
        elif node.op == "-":
            r = a - b
        elif node.op == "*":
            r = a * b
        else:
            if b == 0.0:
                raise EvalDomainError("division by zero", node, t)
            r = a / b
    elif isinstance(node, Pow):
        a = evaluate(node.base, t)
        if a == 0.0 and node.exponent < 0:
            raise EvalDomainError("division by zero", node, t)
        try:
            r = a ** node.exponent
        except OverflowError:
            raise EvalDomainError("overflow", node, t) from None
    else:
        args = [evaluate(a, t) for a in node.args]
        fn = FUNCTIONS[node.name][1]
        if node.name == "sqrt" and args[0] < 0.0:
            raise EvalDomainError("square root of a negative number", node, t)
        try:
            r = fn(*args)
        except (OverflowError, ValueError):
            raise EvalDomainError(f"{node.name} outside its domain", node, t) from None
    if not math.isfinite(r):
        raise EvalDomainError("non-finite value", node, t)
    return float(r)


def evaluate_array(node: Expression, ts) -> np.ndarray:
    """Vectorised :func:`evaluate` over an array of times.

    Values can differ from the scalar path in the last ulp (numpy vs libm
    transcendental functions); domain errors are raised identically.
    """
    ts = np.asarray(ts, dtype=float)
    with np.errstate(all="ignore"):
        out = _eval_array(node, ts)
    return np.broadcast_to(out, ts.shape).astype(float, copy=True)


def _first_bad(mask: np.ndarray, ts: np.ndarray):
    idx = np.flatnonzero(np.broadcast_to(mask, ts.shape))
    return float(ts.flat[idx[0]]) if idx.size else None


def _eval_array(node: Expression, ts: np.ndarray) -> np.ndarray:
    if isinstance(node, Num):
        return np.full(ts.shape, node.value)
    if isinstance(node, Var):
        return ts
    if isinstance(node, Neg):
        return -_eval_array(node.operand, ts)
    if isinstance(node, BinOp):
        a = _eval_array(node.left, ts)
        b = _eval_array(node.right, ts)
        if node.op == "+":
            r = a + b
        elif node.op == "-":
            r = a - b
        elif node.op == "*":
            r = a * b
        else:
            zero = b == 0.0
            if np.any(zero):
                raise EvalDomainError("division by zero", node, _first_bad(zero, ts))
            r = a / b
    elif isinstance(node, Pow):
        a = _eval_array(node.base, ts)
        if node.exponent < 0:
            zero = a == 0.0
            if np.any(zero):
                raise EvalDomainError("division by zero", node, _first_bad(zero, ts))
        r = np.power(a, float(node.exponent))
    else:
        args = [_eval_array(a, ts) for a in node.args]
        if node.name == "min":
            r = args[0]
            for a in args[1:]:
                r = np.minimum(r, a)
        elif node.name == "max":
            r = args[0]
            for a in args[1:]:
                r = np.maximum(r, a)
        else:
            if node.name == "sqrt":
                neg = args[0] < 0.0
                if np.any(neg):
                    raise EvalDomainError(
                        "square root of a negative number", node, _first_bad(neg, ts)
                    )
            r = FUNCTIONS[node.name][2](args[0])
    bad = ~np.isfinite(r)
    if np.any(bad):
        raise EvalDomainError("non-finite value", node, _first_bad(bad, ts))
    return r
