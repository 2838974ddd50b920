"""Small arithmetic expression language for inline coefficients and functionals.

Grammar (``^`` is right associative and binds tighter than unary minus)::

    expr   := term (("+" | "-") term)*
    term   := unary (("*" | "/") unary)*
    unary  := ("+" | "-") unary | power
    power  := atom ("^" unary)?
    atom   := number | name | func "(" expr ")" | "(" expr ")"

Functions: sin, cos, exp, ln, sqrt, cosh, sinh.  Constants: pi, e.
Parsing produces a sympy expression, so derivatives of any order are exact.
"""
from __future__ import annotations

import re
from typing import Sequence

import numpy as np
import sympy as sp

from .errors import ConfigError
from .model import Coefficient, Constant

FUNCS = {"sin": sp.sin, "cos": sp.cos, "exp": sp.exp, "ln": sp.log, "sqrt": sp.sqrt,
         "cosh": sp.cosh, "sinh": sp.sinh}
CONSTS = {"pi": sp.pi, "e": sp.E}

_TOKEN = re.compile(r"\s*(?:(\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)|([A-Za-z_]\w*)|(\S))")


def _tokenize(text: str):
    out, pos = [], 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            break
        num, name, op = m.groups()
        col = m.start(m.lastindex)
        if num is not None:
            out.append(("num", num, col))
        elif name is not None:
            out.append(("name", name, col))
        else:
            if op not in "+-*/^()":
                raise ConfigError(f"unexpected character {op!r} at column {col + 1} in {text!r}")
            out.append(("op", op, col))
        pos = m.end()
    out.append(("end", "", len(text)))
    return out


class _Parser:
    def __init__(self, text: str, variables: Sequence[str]):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0
        self.vars = {v: sp.Symbol(v, real=True) for v in variables}

    def peek(self):
        return self.toks[self.i]

    def take(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def fail(self, msg, tok=None):
        tok = tok or self.peek()
        raise ConfigError(f"{msg} at column {tok[2] + 1} in {self.text!r}")

    def expect(self, op):
        tok = self.take()
        if tok[:2] != ("op", op):
            self.fail(f"expected {op!r}", tok)

    def parse(self):
        e = self.expr()
        if self.peek()[0] != "end":
            self.fail("unexpected trailing input")
        return e

    def expr(self):
        e = self.term()
        while self.peek()[:2] in (("op", "+"), ("op", "-")):
            op = self.take()[1]
            r = self.term()
            e = e + r if op == "+" else e - r
        return e

    def term(self):
        e = self.unary()
        while self.peek()[:2] in (("op", "*"), ("op", "/")):
            op = self.take()[1]
            r = self.unary()
            e = e * r if op == "*" else e / r
        return e

    def unary(self):
        if self.peek()[:2] == ("op", "-"):
            self.take()
            return -self.unary()
        if self.peek()[:2] == ("op", "+"):
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[:2] == ("op", "^"):
            self.take()
            return base ** self.unary()
        return base

    def atom(self):
        tok = self.take()
        kind, val = tok[0], tok[1]
        if kind == "num":
            return sp.Rational(val) if re.fullmatch(r"\d+", val) else sp.Float(val, 17)
        if kind == "name":
            if val in FUNCS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return FUNCS[val](arg)
            if val in self.vars:
                return self.vars[val]
            if val in CONSTS:
                return CONSTS[val]
            self.fail(f"unknown identifier {val!r}", tok)
        if tok[:2] == ("op", "("):
            e = self.expr()
            self.expect(")")
            return e
        self.fail("expected a number, name or '('", tok)


def parse(text, variables: Sequence[str] = ("t", "x")) -> sp.Expr:
    """Parse ``text`` (or pass a number through) into a sympy expression."""
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        return sp.Float(text, 17) if isinstance(text, float) else sp.Integer(text)
    if not isinstance(text, str) or not text.strip():
        raise ConfigError(f"expected an expression string, got {text!r}")
    return _Parser(text, variables).parse()


def to_function(expr: sp.Expr, variables: Sequence[str]):
    """Vectorized numpy callable of ``variables`` (broadcasts constants)."""
    syms = [sp.Symbol(v, real=True) for v in variables]
    f = sp.lambdify(syms, expr, modules="numpy")

    def call(*args):
        args = [np.asarray(a, dtype=float) for a in args]
        return np.asarray(f(*args), dtype=float) + np.zeros(np.broadcast(*args).shape)

    return call


def coefficient(text, name: str = "") -> Coefficient:
    """Coefficient of (t, x) with exact x-derivatives of every order."""
    e = parse(text, ("t", "x"))
    if not e.free_symbols:
        return Constant(float(e))
    xs = sp.Symbol("x", real=True)
    cache = {}

    def deriv(n):
        if n not in cache:
            cache[n] = to_function(sp.diff(e, xs, n), ("t", "x"))
        return cache[n]

    return Coefficient(to_function(e, ("t", "x")), derivs=deriv, name=name or str(text))


def derivatives(text, var: str, variables: Sequence[str], order: int):
    """[f, f', ..., f^(order)] in ``var`` as numpy callables of ``variables``."""
    e = parse(text, variables)
    s = sp.Symbol(var, real=True)
    return [to_function(sp.diff(e, s, n), variables) for n in range(order + 1)]
