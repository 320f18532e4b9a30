"""Closed-form scalar expressions in the chart variables.

Expressions are the carrier for everything a scenario file supplies as a
formula: metric components, submersions, vector field components and test
functions.  The grammar (precedence climbing, lowest binding first)::

    expr    := sum
    sum     := product (("+" | "-") product)*
    product := unary (("*" | "/") unary)*
    unary   := "-" unary | "+" unary | power
    power   := atom ("^" unary)?            # right associative
    atom    := NUMBER | NAME | NAME "(" expr ("," expr)* ")" | "(" expr ")"

So ``-u^2`` is ``-(u^2)`` and ``2^-1`` is ``2^(-1)``.  Names are the
variables (``u``, ``v`` and optionally ``t``), the constants ``pi`` and
``e``, and the builtins listed in :data:`FUNCTIONS`.

Evaluation is vectorised over numpy arrays and strict: a domain violation
or any non-finite intermediate raises :class:`EvalError` instead of
propagating NaN.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Union

import numpy as np

__all__ = [
    "Expr",
    "Num",
    "Var",
    "Unary",
    "Binary",
    "Call",
    "ParseError",
    "EvalError",
    "parse",
    "to_source",
    "evaluate",
    "bump",
    "FUNCTIONS",
    "CONSTANTS",
]


class ParseError(ValueError):
    """Syntax or name error in an expression, with the byte offset."""

    def __init__(self, message: str, offset: int, source: str = ""):
        self.offset = offset
        self.source = source
        super().__init__(f"{message} at offset {offset}")


class EvalError(ArithmeticError):
    """Domain violation or non-finite value during evaluation."""


def bump(x, r_in, r_out):
    """Smooth radial cutoff: 1 for |x| <= r_in, 0 for |x| >= r_out.

    The transition uses the C-infinity blend exp(-1/s) / (exp(-1/s) + exp(-1/(1-s)))
    so every derivative vanishes at both ends.
    """
    if np.ndim(r_in) == 0 and np.ndim(r_out) == 0:
        if not 0 <= r_in < r_out:
            raise EvalError("bump: need 0 <= r_in < r_out")
    elif np.any(np.asarray(r_out) <= r_in) or np.any(np.asarray(r_in) < 0):
        raise EvalError("bump: need 0 <= r_in < r_out")
    s = (np.abs(x) - r_in) / (r_out - r_in)
    s = np.minimum(np.maximum(s, 0.0), 1.0)
    # at s = 0 or 1 the exponent is -inf and the exponential is exactly 0
    with np.errstate(divide="ignore"):
        a = np.exp(-1.0 / s)
        b = np.exp(-1.0 / (1.0 - s))
    return b / (a + b)


def _checked_min(a, b):
    return np.minimum(a, b)


def _checked_max(a, b):
    return np.maximum(a, b)


# name -> (arity, implementation, domain predicate or None)
FUNCTIONS = {
    "sin": (1, np.sin, None),
    "cos": (1, np.cos, None),
    "tan": (1, np.tan, None),
    "exp": (1, np.exp, None),
    "log": (1, np.log, lambda x: x > 0),
    "sqrt": (1, np.sqrt, lambda x: x >= 0),
    "abs": (1, np.abs, None),
    "min": (2, _checked_min, None),
    "max": (2, _checked_max, None),
    "bump": (3, bump, None),
}

CONSTANTS = {"pi": math.pi, "e": math.e}


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str
    operand: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


Expr = Union[Num, Var, Unary, Binary, Call]

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)

# left binding powers of infix operators
_INFIX = {"+": 10, "-": 10, "*": 20, "/": 20, "^": 30}
_UNARY_BP = 25


def _tokenize(src: str):
    pos = 0
    tokens = []
    while pos < len(src):
        if src[pos:].strip() == "":
            break
        m = _TOKEN.match(src, pos)
        if m is None or m.end() == pos:
            off = pos + (len(src[pos:]) - len(src[pos:].lstrip()))
            raise ParseError(f"unexpected character {src[off]!r}", off, src)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(src)))
    return tokens


class _Parser:
    def __init__(self, src: str, variables):
        self.src = src
        self.variables = frozenset(variables)
        self.tokens = _tokenize(src)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, text, off = self.advance()
        if text != value or kind == "end":
            found = "end of input" if kind == "end" else repr(text)
            raise ParseError(f"expected {value!r}, found {found}", off, self.src)

    def expression(self, rbp: int = 0) -> Expr:
        left = self.prefix()
        while True:
            kind, text, off = self.peek()
            if kind != "op" or text not in _INFIX:
                break
            lbp = _INFIX[text]
            if lbp <= rbp:
                break
            self.advance()
            # ^ is right associative; its right operand may carry a unary sign
            right = self.expression(lbp - 1 if text == "^" else lbp)
            left = Binary(text, left, right)
        return left

    def prefix(self) -> Expr:
        kind, text, off = self.advance()
        if kind == "num":
            return Num(float(text))
        if kind == "op" and text in "+-":
            operand = self.expression(_UNARY_BP)
            return operand if text == "+" else Unary("-", operand)
        if kind == "op" and text == "(":
            inner = self.expression(0)
            self.expect(")")
            return inner
        if kind == "name":
            if self.peek()[1] == "(" and self.peek()[0] == "op":
                return self.call(text, off)
            if text in self.variables:
                return Var(text)
            if text in CONSTANTS:
                return Num(CONSTANTS[text])
            if text in FUNCTIONS:
                raise ParseError(f"function {text!r} needs arguments", off, self.src)
            raise ParseError(f"unknown identifier {text!r}", off, self.src)
        if kind == "end":
            raise ParseError("unexpected end of input", off, self.src)
        raise ParseError(f"unexpected token {text!r}", off, self.src)

    def call(self, name: str, off: int) -> Expr:
        if name not in FUNCTIONS:
            raise ParseError(f"unknown function {name!r}", off, self.src)
        self.expect("(")
        args = [self.expression(0)]
        while self.peek()[1] == ",":
            self.advance()
            args.append(self.expression(0))
        self.expect(")")
        arity = FUNCTIONS[name][0]
        if len(args) != arity:
            raise ParseError(
                f"{name} takes {arity} argument(s), got {len(args)}", off, self.src
            )
        return Call(name, tuple(args))


def parse(src: str, variables=("u", "v")) -> Expr:
    """Parse ``src`` into an expression tree.

    Raises
    ------
    ParseError
        On unknown identifiers, arity mismatch, unbalanced parentheses or
        stray characters.  ``err.offset`` is the byte offset of the problem.
    """
    if not src or not src.strip():
        raise ParseError("empty expression", 0, src or "")
    p = _Parser(src, variables)
    tree = p.expression(0)
    kind, text, off = p.peek()
    if kind != "end":
        if text == ")":
            raise ParseError("unbalanced ')'", off, src)
        raise ParseError(f"unexpected token {text!r}", off, src)
    return tree


def to_source(e: Expr) -> str:
    """Fully parenthesised source text; ``parse(to_source(e))`` rebuilds ``e``."""
    if isinstance(e, Num):
        r = repr(float(e.value))
        neg = math.copysign(1.0, e.value) < 0
        return f"({r})" if neg or "inf" in r or "nan" in r else r
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Unary):
        return f"(-{to_source(e.operand)})"
    if isinstance(e, Binary):
        return f"({to_source(e.left)} {e.op} {to_source(e.right)})"
    if isinstance(e, Call):
        return f"{e.name}({', '.join(to_source(a) for a in e.args)})"
    raise TypeError(f"not an expression node: {e!r}")


def free_variables(e: Expr) -> set:
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, Unary):
        return free_variables(e.operand)
    if isinstance(e, Binary):
        return free_variables(e.left) | free_variables(e.right)
    if isinstance(e, Call):
        out = set()
        for a in e.args:
            out |= free_variables(a)
        return out
    return set()


def _first_bad(mask, env):
    arrays = [np.asarray(x, dtype=float) for x in env.values()]
    shape = np.broadcast(np.asarray(mask), *arrays).shape
    mask = np.broadcast_to(mask, shape)
    where = tuple(np.argwhere(mask)[0]) if mask.ndim else ()
    parts = [
        f"{k}={float(np.broadcast_to(a, shape)[where]):.6g}"
        for k, a in sorted(zip(env.keys(), arrays))
    ]
    return ", ".join(parts)


def _finite(x, what, env):
    if not np.all(np.isfinite(x)):
        bad = ~np.isfinite(x)
        raise EvalError(f"{what} produced a non-finite value at ({_first_bad(bad, env)})")
    return x


def _eval(e: Expr, env):
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        try:
            return env[e.name]
        except KeyError:
            raise EvalError(f"variable {e.name!r} is not bound") from None
    if isinstance(e, Unary):
        return -_eval(e.operand, env)
    if isinstance(e, Binary):
        a = _eval(e.left, env)
        b = _eval(e.right, env)
        op = e.op
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        if op == "*":
            return a * b
        with np.errstate(all="ignore"):
            if op == "/":
                if np.any(np.asarray(b) == 0):
                    raise EvalError(
                        f"division by zero at ({_first_bad(np.asarray(b) == 0, env)})"
                    )
                return _finite(np.true_divide(a, b), "division", env)
            out = np.power(np.asarray(a, dtype=float), b)
        return _finite(out, "power", env)
    if isinstance(e, Call):
        arity, fn, domain = FUNCTIONS[e.name]
        args = [_eval(a, env) for a in e.args]
        if domain is not None:
            ok = domain(np.asarray(args[0]))
            if not np.all(ok):
                raise EvalError(
                    f"{e.name} outside its domain at ({_first_bad(~ok, env)})"
                )
        with np.errstate(all="ignore"):
            out = fn(*args)
        return _finite(out, e.name, env)
    raise TypeError(f"not an expression node: {e!r}")


def evaluate(e: Expr, u=0.0, v=0.0, **extra):
    """Evaluate ``e`` at ``(u, v)`` (scalars or broadcastable arrays)."""
    env = {"u": u, "v": v, **extra}
    out = _eval(e, env)
    shape = np.broadcast_shapes(*[np.shape(x) for x in env.values()])
    if shape == ():
        return float(out)
    if np.shape(out) == shape:
        return np.asarray(out, dtype=float)
    return np.full(shape, out, dtype=float)
