"""Real-function expressions: parsing, printing and vectorized evaluation.

Grammar::

    expr  := term (("+"|"-") term)*
    term  := unary (("*"|"/") unary)*
    unary := "-" unary | power
    power := atom ("^" unary)?
    atom  := NUMBER | "x" | IDENT "(" expr ("," expr)? ")" | "(" expr ")"

``^`` is right-associative and binds tighter than unary minus, so ``-x^2``
reads as ``-(x^2)``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Union

import numpy as np

__all__ = [
    "Interval",
    "Num",
    "Var",
    "Neg",
    "BinOp",
    "Call",
    "Expr",
    "ExprSyntaxError",
    "EvalError",
    "DomainError",
    "NonFiniteError",
    "RealFunction",
    "parse",
    "to_source",
    "substitute",
    "num",
    "evaluate",
    "eval_grid",
    "function",
    "FUNCTIONS",
]


class ExprSyntaxError(ValueError):
    """Malformed expression source."""

    def __init__(self, message, offset, expected=()):
        self.offset = offset
        self.expected = tuple(sorted(expected))
        detail = f"{message} at offset {offset}"
        if self.expected:
            detail += f" (expected one of: {', '.join(self.expected)})"
        super().__init__(detail)


class EvalError(ArithmeticError):
    """A partial-function violation or non-finite intermediate value."""

    def __init__(self, message, subexpr=None, point=None, index=None):
        self.subexpr = subexpr
        self.point = point
        self.index = index
        parts = [message]
        if subexpr is not None:
            parts.append(f"in '{subexpr}'")
        if point is not None:
            parts.append(f"at x={point!r}")
        if index is not None:
            parts.append(f"(grid index {index})")
        super().__init__(" ".join(parts))


class DomainError(EvalError):
    """Evaluation requested outside the function's domain."""


class NonFiniteError(EvalError):
    """An intermediate value overflowed to infinity or became NaN."""


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float
    lo_closed: bool = False
    hi_closed: bool = False

    def __post_init__(self):
        lo, hi = float(self.lo), float(self.hi)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if math.isnan(lo) or math.isnan(hi) or not lo < hi:
            raise ValueError(f"empty interval: lo={lo}, hi={hi}")
        if (math.isinf(lo) and self.lo_closed) or (math.isinf(hi) and self.hi_closed):
            raise ValueError("an unbounded endpoint cannot be closed")

    @classmethod
    def real_line(cls):
        return cls(-math.inf, math.inf)

    @classmethod
    def closed(cls, lo, hi):
        return cls(lo, hi, True, True)

    @classmethod
    def open(cls, lo, hi):
        return cls(lo, hi, False, False)

    @property
    def bounded(self):
        return math.isfinite(self.lo) and math.isfinite(self.hi)

    def contains(self, x):
        """Vectorized membership test honouring endpoint closedness."""
        x = np.asarray(x, dtype=float)
        above = (x >= self.lo) if self.lo_closed else (x > self.lo)
        below = (x <= self.hi) if self.hi_closed else (x < self.hi)
        return above & below

    def interior_contains(self, x):
        x = np.asarray(x, dtype=float)
        return (x > self.lo) & (x < self.hi)

    def intersect(self, lo, hi, lo_closed=True, hi_closed=True):
        """Intersection with another interval, given by its endpoints."""
        if lo > self.lo or (lo == self.lo and not self.lo_closed):
            new_lo, new_lo_closed = lo, lo_closed and math.isfinite(lo)
        else:
            new_lo, new_lo_closed = self.lo, self.lo_closed
        if hi < self.hi or (hi == self.hi and not self.hi_closed):
            new_hi, new_hi_closed = hi, hi_closed and math.isfinite(hi)
        else:
            new_hi, new_hi_closed = self.hi, self.hi_closed
        return Interval(new_lo, new_hi, new_lo_closed, new_hi_closed)

    def to_dict(self):
        return {
            "lo": self.lo,
            "hi": self.hi,
            "lo_closed": self.lo_closed,
            "hi_closed": self.hi_closed,
        }

    def __str__(self):
        left = "[" if self.lo_closed else "("
        right = "]" if self.hi_closed else ")"
        return f"{left}{self.lo:g}, {self.hi:g}{right}"


# -- AST ---------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError("numeric literals must be finite")


@dataclass(frozen=True)
class Var:
    pass


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


Expr = Union[Num, Var, Neg, BinOp, Call]

FUNCTIONS = {"exp": 1, "log": 1, "abs": 1, "sgn": 1, "sqrt": 1, "min": 2, "max": 2}


def num(value):
    """Literal node for any finite float; negatives become ``Neg(Num)``."""
    value = float(value)
    if value < 0 or (value == 0 and math.copysign(1.0, value) < 0):
        return Neg(Num(-value))
    return Num(value)


# -- Parsing -----------------------------------------------------------------

_NUMBER = re.compile(r"(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")
_IDENT = re.compile(r"[A-Za-z_][A-Za-z_0-9]*")
_ATOM_START = frozenset({"NUMBER", "x", "IDENT", "(", "-"})


@dataclass
class _Token:
    kind: str
    text: str
    offset: int


def _tokenize(source):
    tokens = []
    i = 0
    byte = 0
    n = len(source)
    while i < n:
        ch = source[i]
        if ch.isspace():
            i += 1
            byte += len(ch.encode("utf-8"))
            continue
        m = _NUMBER.match(source, i)
        if m:
            text = m.group()
            tokens.append(_Token("NUMBER", text, byte))
        elif (m := _IDENT.match(source, i)) is not None:
            text = m.group()
            if text == "x":
                tokens.append(_Token("x", text, byte))
            elif text in FUNCTIONS:
                tokens.append(_Token("IDENT", text, byte))
            else:
                raise ExprSyntaxError(f"unknown identifier '{text}'", byte, _ATOM_START - {"-"})
        elif ch in "+-*/^(),":
            text = ch
            tokens.append(_Token(ch, ch, byte))
        else:
            raise ExprSyntaxError(f"unexpected character {ch!r}", byte)
        i += len(text)
        byte += len(text.encode("utf-8"))
    tokens.append(_Token("EOF", "", byte))
    return tokens


class _Parser:
    def __init__(self, source):
        self.tokens = _tokenize(source)
        self.pos = 0

    @property
    def tok(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind):
        if self.tok.kind != kind:
            self.fail({kind})
        return self.advance()

    def fail(self, expected):
        tok = self.tok
        what = "end of input" if tok.kind == "EOF" else f"'{tok.text}'"
        raise ExprSyntaxError(f"unexpected {what}", tok.offset, expected)

    def parse(self):
        node = self.expr()
        if self.tok.kind != "EOF":
            self.fail({"+", "-", "*", "/", "^", "EOF"})
        return node

    def expr(self):
        node = self.term()
        while self.tok.kind in ("+", "-"):
            op = self.advance().kind
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.tok.kind in ("*", "/"):
            op = self.advance().kind
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        if self.tok.kind == "-":
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.tok.kind == "^":
            self.advance()
            return BinOp("^", base, self.unary())
        return base

    def atom(self):
        tok = self.tok
        if tok.kind == "NUMBER":
            self.advance()
            value = float(tok.text)
            if not math.isfinite(value):
                raise ExprSyntaxError("numeric literal overflows", tok.offset)
            return Num(value)
        if tok.kind == "x":
            self.advance()
            return Var()
        if tok.kind == "IDENT":
            self.advance()
            self.expect("(")
            args = [self.expr()]
            if self.tok.kind == ",":
                self.advance()
                args.append(self.expr())
            close = self.tok
            self.expect(")")
            if len(args) != FUNCTIONS[tok.text]:
                raise ExprSyntaxError(
                    f"{tok.text} takes {FUNCTIONS[tok.text]} argument(s), got {len(args)}",
                    close.offset,
                )
            return Call(tok.text, tuple(args))
        if tok.kind == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        self.fail(_ATOM_START)


def parse(source: str) -> Expr:
    """Parse *source* into an expression tree."""
    return _Parser(source).parse()


def _format_number(value):
    if value == int(value) and abs(value) < 1e16:
        return str(int(value))
    return repr(value)


def to_source(node: Expr) -> str:
    """Canonical, fully parenthesized source text; ``parse`` inverts it."""
    if isinstance(node, Num):
        return _format_number(node.value)
    if isinstance(node, Var):
        return "x"
    if isinstance(node, Neg):
        return f"(-{to_source(node.operand)})"
    if isinstance(node, BinOp):
        return f"({to_source(node.left)} {node.op} {to_source(node.right)})"
    if isinstance(node, Call):
        return f"{node.name}({', '.join(to_source(a) for a in node.args)})"
    raise TypeError(f"not an expression node: {node!r}")


def substitute(node: Expr, replacement: Expr) -> Expr:
    """Replace every occurrence of the variable by *replacement*."""
    if isinstance(node, Var):
        return replacement
    if isinstance(node, Num):
        return node
    if isinstance(node, Neg):
        return Neg(substitute(node.operand, replacement))
    if isinstance(node, BinOp):
        return BinOp(node.op, substitute(node.left, replacement), substitute(node.right, replacement))
    return Call(node.name, tuple(substitute(a, replacement) for a in node.args))


# -- Evaluation --------------------------------------------------------------


def _raise_at(message, node, x, mask, kind=EvalError):
    idx = int(np.flatnonzero(mask)[0])
    raise kind(message, to_source(node), float(x[idx]), idx)


def _ev(node, x):
    if isinstance(node, Num):
        return np.full(x.shape, node.value)
    if isinstance(node, Var):
        return x
    if isinstance(node, Neg):
        return -_ev(node.operand, x)
    if isinstance(node, BinOp):
        a = _ev(node.left, x)
        b = _ev(node.right, x)
        op = node.op
        if op == "+":
            out = a + b
        elif op == "-":
            out = a - b
        elif op == "*":
            out = a * b
        elif op == "/":
            zero = b == 0
            if zero.any():
                _raise_at("division by zero", node, x, zero)
            out = a / b
        else:
            integral = b == np.round(b)
            bad = (~integral & (a <= 0)) | (integral & (a == 0) & (b < 0))
            if bad.any():
                _raise_at("power needs a positive base for non-integer exponents", node, x, bad)
            out = np.power(a, b)
    else:
        args = [_ev(a, x) for a in node.args]
        name = node.name
        a = args[0]
        if name == "exp":
            out = np.exp(a)
        elif name == "log":
            bad = a <= 0
            if bad.any():
                _raise_at("log of a non-positive value", node, x, bad)
            out = np.log(a)
        elif name == "sqrt":
            bad = a < 0
            if bad.any():
                _raise_at("sqrt of a negative value", node, x, bad)
            out = np.sqrt(a)
        elif name == "abs":
            out = np.abs(a)
        elif name == "sgn":
            out = np.sign(a)
        elif name == "min":
            out = np.minimum(a, args[1])
        else:
            out = np.maximum(a, args[1])
    bad = ~np.isfinite(out)
    if bad.any():
        _raise_at("non-finite value", node, x, bad, NonFiniteError)
    return out


def evaluate(node: Expr, x):
    """Evaluate *node* at a scalar or array of points (no domain check)."""
    arr = np.asarray(x, dtype=float)
    with np.errstate(all="ignore"):
        out = _ev(node, np.atleast_1d(arr).ravel())
    out = out.reshape(arr.shape) if arr.ndim else out[0]
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class RealFunction:
    """An expression together with its domain.

    ``overrides`` pins values at isolated points, e.g. ``g(0) = alpha`` for a
    slope function that is ``sgn`` elsewhere, or the removable point of a
    generated pointwise MV-function.
    """

    body: Expr
    domain: Interval = field(default_factory=Interval.real_line)
    overrides: tuple = ()

    @property
    def source(self):
        return to_source(self.body)

    def with_overrides(self, *points):
        merged = dict(self.overrides)
        merged.update({float(p): float(v) for p, v in points})
        return RealFunction(self.body, self.domain, tuple(sorted(merged.items())))

    def __call__(self, x):
        arr = np.asarray(x, dtype=float)
        flat = np.atleast_1d(arr).ravel()
        outside = ~self.domain.contains(flat)
        if outside.any():
            idx = int(np.flatnonzero(outside)[0])
            raise DomainError(f"point outside domain {self.domain}", point=float(flat[idx]), index=idx)
        if self.overrides:
            out = np.empty_like(flat)
            pinned = np.zeros(flat.shape, dtype=bool)
            for p, v in self.overrides:
                hit = flat == p
                out[hit] = v
                pinned |= hit
            rest = ~pinned
            if rest.any():
                try:
                    out[rest] = evaluate(self.body, flat[rest])
                except EvalError as exc:
                    exc.index = int(np.flatnonzero(rest)[exc.index])
                    raise
        else:
            out = np.atleast_1d(evaluate(self.body, flat))
        if arr.ndim == 0:
            return float(out[0])
        return out.reshape(arr.shape)


def function(source, domain=None, overrides=()):
    """Convenience constructor: ``function("abs(x)", Interval.closed(-2, 2))``."""
    body = parse(source) if isinstance(source, str) else source
    return RealFunction(body, domain or Interval.real_line(), tuple(overrides))


def eval_grid(f, grid):
    """Evaluate *f* at every grid point, preserving order.

    Errors carry the grid index of the first offending point.
    """
    points = getattr(grid, "points", grid)
    return np.asarray(f(np.asarray(points, dtype=float)), dtype=float)
