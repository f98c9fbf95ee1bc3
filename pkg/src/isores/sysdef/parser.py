"""Recursive-descent parser for coefficient expressions.

Grammar (whitespace-insensitive)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := ('+' | '-') unary | power
    power   := atom (('^' | '**') exponent)?
    exponent:= ['+' | '-'] INTEGER | '(' ['+' | '-'] INTEGER ')'
    atom    := NUMBER | IDENT | IDENT '(' expr ')' | '(' expr ')'

Identifiers are ``r`` (polar mode), ``x1``/``x2`` (Cartesian mode), the angle
(``phi`` or ``psi``) and ``S`` inside ``cos``/``sin`` arguments, ``pi``, and
any name from the supplied parameter map.  Trig arguments must be linear in
the angle and ``S``; the angle frequency has to be an integer and the
``S`` frequency a multiple of ``1/denom``.  A constant phase shift inside a
trig call is expanded with the addition formulas.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping

from ..trigpoly import COS, SIN, CONST, TrigPoly


class ParseError(ValueError):
    """Syntax or semantic error; ``pos`` is the 0-based offset into the source."""

    def __init__(self, msg: str, pos: int, src: str = ""):
        self.pos = pos
        self.src = src
        where = f" at position {pos}"
        if src:
            where += f": {src[:pos]}>>>{src[pos:]}"
        super().__init__(msg + where)


_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>\*\*|[-+*/^(),])
""", re.VERBOSE)


@dataclass
class Tok:
    kind: str
    text: str
    pos: int


def tokenize(src: str) -> list[Tok]:
    toks, pos = [], 0
    while pos < len(src):
        m = _TOKEN.match(src, pos)
        if not m:
            raise ParseError(f"unexpected character {src[pos]!r}", pos, src)
        kind = m.lastgroup
        if kind != "ws":
            text = m.group()
            toks.append(Tok("op" if text == "**" else kind, "^" if text == "**" else text, pos))
        pos = m.end()
    toks.append(Tok("end", "", len(src)))
    return toks


# ---------------------------------------------------------------- AST
@dataclass
class Node:
    pos: int


@dataclass
class Num(Node):
    text: str


@dataclass
class Var(Node):
    name: str


@dataclass
class Unary(Node):
    op: str
    arg: Node


@dataclass
class Bin(Node):
    op: str
    left: Node
    right: Node


@dataclass
class PowN(Node):
    base: Node
    exp: int


@dataclass
class Call(Node):
    fname: str
    arg: Node


class _Parser:
    def __init__(self, src: str):
        self.src = src
        self.toks = tokenize(src)
        self.i = 0

    def peek(self) -> Tok:
        return self.toks[self.i]

    def take(self) -> Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, text: str) -> Tok:
        t = self.take()
        if t.text != text:
            raise ParseError(f"expected {text!r}, found {t.text or 'end of input'!r}", t.pos, self.src)
        return t

    def parse(self) -> Node:
        node = self.expr()
        t = self.peek()
        if t.kind != "end":
            raise ParseError(f"unexpected token {t.text!r}", t.pos, self.src)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek().text in ("+", "-"):
            t = self.take()
            node = Bin(t.pos, t.text, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek().text in ("*", "/"):
            t = self.take()
            node = Bin(t.pos, t.text, node, self.unary())
        return node

    def unary(self) -> Node:
        t = self.peek()
        if t.text in ("+", "-"):
            self.take()
            return Unary(t.pos, t.text, self.unary())
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.peek().text == "^":
            t = self.take()
            base = PowN(t.pos, base, self.exponent())
        return base

    def exponent(self) -> int:
        paren = False
        if self.peek().text == "(":
            self.take()
            paren = True
        sign = 1
        if self.peek().text in ("+", "-"):
            sign = -1 if self.take().text == "-" else 1
        t = self.take()
        if t.kind != "num" or not re.fullmatch(r"\d+", t.text):
            raise ParseError("exponent must be an integer literal", t.pos, self.src)
        if paren:
            self.expect(")")
        return sign * int(t.text)

    def atom(self) -> Node:
        t = self.take()
        if t.kind == "num":
            return Num(t.pos, t.text)
        if t.kind == "ident":
            if self.peek().text == "(":
                self.take()
                arg = self.expr()
                self.expect(")")
                return Call(t.pos, t.text, arg)
            return Var(t.pos, t.text)
        if t.text == "(":
            node = self.expr()
            self.expect(")")
            return node
        raise ParseError(f"unexpected token {t.text or 'end of input'!r}", t.pos, self.src)


def parse_ast(src: str) -> Node:
    return _Parser(src).parse()


# ---------------------------------------------------------------- polynomial values
class CPoly:
    """Polynomial in (x1, x2) with TrigPoly coefficients; polar values use key (0, 0) only."""

    __slots__ = ("denom", "terms")

    def __init__(self, terms: dict, denom: int):
        self.denom = denom
        self.terms = {k: v for k, v in terms.items() if not v.is_zero()}

    @classmethod
    def of(cls, p: TrigPoly, key=(0, 0)) -> "CPoly":
        return cls({key: p}, p.denom)

    def __add__(self, o: "CPoly") -> "CPoly":
        out = dict(self.terms)
        for k, v in o.terms.items():
            out[k] = out[k] + v if k in out else v
        return CPoly(out, self.denom)

    def __neg__(self) -> "CPoly":
        return CPoly({k: -v for k, v in self.terms.items()}, self.denom)

    def __sub__(self, o: "CPoly") -> "CPoly":
        return self + (-o)

    def __mul__(self, o: "CPoly") -> "CPoly":
        out: dict = {}
        for (a1, b1), v1 in self.terms.items():
            for (a2, b2), v2 in o.terms.items():
                k = (a1 + a2, b1 + b2)
                pr = v1 * v2
                out[k] = out[k] + pr if k in out else pr
        return CPoly(out, self.denom)

    def scale(self, c: float) -> "CPoly":
        return CPoly({k: v.scale(c) for k, v in self.terms.items()}, self.denom)

    def is_number(self) -> bool:
        return all(k == (0, 0) for k in self.terms) and self.poly().is_const()

    def number(self) -> float:
        return self.poly().const_value()

    def poly(self) -> TrigPoly:
        if any(k != (0, 0) for k in self.terms):
            raise ValueError("value depends on x1/x2")
        return self.terms.get((0, 0), TrigPoly.zero(self.denom))


@dataclass
class _Linear:
    """``const + angle_coeff * angle + s_coeff * S`` with exact rational frequencies."""

    const: float
    angle: Fraction
    s: Fraction
    exact: bool  # const came only from literals (so it can multiply a frequency)

    @property
    def is_const(self) -> bool:
        return self.angle == 0 and self.s == 0


class _Evaluator:
    def __init__(self, src, denom, angle_var, params, mode):
        self.src = src
        self.denom = denom
        self.angle_var = angle_var
        self.params = dict(params or {})
        self.mode = mode  # "polar" | "cartesian" | "s_only"

    def err(self, msg, node):
        raise ParseError(msg, node.pos, self.src)

    # ---- constants
    def _lookup(self, node: Var):
        if node.name in self.params:
            return float(self.params[node.name])
        if node.name == "pi":
            return math.pi
        return None

    # ---- linear (trig argument) evaluation
    def lin(self, node) -> _Linear:
        if isinstance(node, Num):
            return _Linear(float(node.text), Fraction(0), Fraction(0), True)
        if isinstance(node, Var):
            if node.name == self.angle_var and self.mode != "s_only" and self.mode != "cartesian":
                return _Linear(0.0, Fraction(1), Fraction(0), True)
            if node.name == "S":
                return _Linear(0.0, Fraction(0), Fraction(1), True)
            v = self._lookup(node)
            if v is None:
                self.err(f"unknown identifier {node.name!r} in trig argument", node)
            return _Linear(v, Fraction(0), Fraction(0), False)
        if isinstance(node, Unary):
            a = self.lin(node.arg)
            if node.op == "-":
                return _Linear(-a.const, -a.angle, -a.s, a.exact)
            return a
        if isinstance(node, Bin):
            a, b = self.lin(node.left), self.lin(node.right)
            if node.op in "+-":
                sg = 1 if node.op == "+" else -1
                return _Linear(a.const + sg * b.const, a.angle + sg * b.angle, a.s + sg * b.s,
                               a.exact and b.exact)
            if node.op == "*":
                if not a.is_const and not b.is_const:
                    self.err("trig argument must be linear", node)
                c, v = (a, b) if a.is_const else (b, a)
                if v.is_const:
                    return _Linear(c.const * v.const, Fraction(0), Fraction(0), c.exact and v.exact)
                if not c.exact:
                    self.err("frequency must be a rational literal, not a parameter", node)
                fc = _frac(node.left if a.is_const else node.right, self)
                return _Linear(fc * v.const, fc * v.angle, fc * v.s, v.exact)
            if node.op == "/":
                if not b.is_const:
                    self.err("division by a non-constant in trig argument", node)
                if b.const == 0:
                    self.err("division by zero", node)
                if a.is_const:
                    return _Linear(a.const / b.const, Fraction(0), Fraction(0), a.exact and b.exact)
                if not b.exact:
                    self.err("frequency must be a rational literal, not a parameter", node)
                fb = _frac(node.right, self)
                return _Linear(a.const / b.const, a.angle / fb, a.s / fb, a.exact)
        if isinstance(node, PowN):
            a = self.lin(node.base)
            if not a.is_const:
                self.err("trig argument must be linear", node)
            return _Linear(a.const ** node.exp, Fraction(0), Fraction(0), a.exact)
        self.err("unsupported construct in trig argument", node)

    # ---- value evaluation
    def val(self, node) -> CPoly:
        d = self.denom
        if isinstance(node, Num):
            return CPoly.of(TrigPoly.const(float(node.text), d))
        if isinstance(node, Var):
            name = node.name
            if name == "r" and self.mode == "polar":
                return CPoly.of(TrigPoly.r(1, d))
            if name in ("x1", "x2") and self.mode == "cartesian":
                key = (1, 0) if name == "x1" else (0, 1)
                return CPoly({key: TrigPoly.const(1.0, d)}, d)
            v = self._lookup(node)
            if v is not None:
                return CPoly.of(TrigPoly.const(v, d))
            if name in (self.angle_var, "S", "phi", "psi"):
                self.err(f"{name!r} may only appear inside cos(...) or sin(...)", node)
            self.err(f"unknown identifier {name!r}", node)
        if isinstance(node, Unary):
            a = self.val(node.arg)
            return -a if node.op == "-" else a
        if isinstance(node, Bin):
            a, b = self.val(node.left), self.val(node.right)
            if node.op == "+":
                return a + b
            if node.op == "-":
                return a - b
            if node.op == "*":
                return a * b
            if b.is_number():
                c = b.number()
                if c == 0:
                    self.err("division by zero", node)
                return a.scale(1.0 / c)
            inv = self._r_inverse(b)
            if inv is None:
                self.err("can only divide by a constant or a monomial in r", node)
            return a * inv
        if isinstance(node, PowN):
            a = self.val(node.base)
            k = node.exp
            if k >= 0:
                out = CPoly.of(TrigPoly.const(1.0, d))
                for _ in range(k):
                    out = out * a
                return out
            inv = self._r_inverse(a)
            if inv is None:
                self.err("negative powers are only allowed for monomials in r", node)
            out = CPoly.of(TrigPoly.const(1.0, d))
            for _ in range(-k):
                out = out * inv
            return out
        if isinstance(node, Call):
            if node.fname not in ("cos", "sin"):
                self.err(f"unknown function {node.fname!r}", node)
            lin = self.lin(node.arg)
            if lin.angle.denominator != 1:
                self.err("angle frequency must be an integer", node.arg)
            lnum = lin.s * d
            if lnum.denominator != 1:
                self.err(f"S frequency {lin.s} is not a multiple of 1/{d}", node.arg)
            j, l = int(lin.angle), int(lnum)
            cb = TrigPoly.term(1.0, 0, COS, j, l, d) if (j or l) else TrigPoly.const(1.0, d)
            sb = TrigPoly.term(1.0, 0, SIN, j, l, d) if (j or l) else TrigPoly.zero(d)
            c0, s0 = math.cos(lin.const), math.sin(lin.const)
            if lin.const == 0.0:
                c0, s0 = 1.0, 0.0
            if node.fname == "cos":
                p = cb.scale(c0) - sb.scale(s0)
            else:
                p = sb.scale(c0) + cb.scale(s0)
            return CPoly.of(p)
        self.err("unsupported construct", node)

    def _r_inverse(self, b: CPoly):
        if any(k != (0, 0) for k in b.terms):
            return None
        p = b.poly()
        if len(p) != 1:
            return None
        (rp, kind, j, l), c = next(iter(p.items()))
        if kind != CONST or c == 0:
            return None
        return CPoly.of(TrigPoly([(1.0 / c, -rp, CONST, 0, 0)], self.denom))


def _frac(node, ev: _Evaluator) -> Fraction:
    """Exact rational value of a literal-only subexpression."""
    if isinstance(node, Num):
        return Fraction(node.text)
    if isinstance(node, Unary):
        v = _frac(node.arg, ev)
        return -v if node.op == "-" else v
    if isinstance(node, Bin):
        a, b = _frac(node.left, ev), _frac(node.right, ev)
        return {"+": a + b, "-": a - b, "*": a * b, "/": a / b}[node.op]
    if isinstance(node, PowN):
        return _frac(node.base, ev) ** node.exp
    ev.err("frequency must be a rational literal", node)


def parse_expr(src: str, angle_var: str = "phi", denom: int = 1,
               params: Mapping[str, float] | None = None) -> TrigPoly:
    """Parse a polar coefficient expression in ``r``, the angle and ``S`` into a TrigPoly."""
    if angle_var not in ("phi", "psi"):
        raise ValueError("angle_var must be 'phi' or 'psi'")
    ev = _Evaluator(src, denom, angle_var, params, "polar")
    return ev.val(parse_ast(src)).poly()


def parse_cartesian(src: str, denom: int = 1, params: Mapping[str, float] | None = None) -> CPoly:
    """Parse a polynomial in ``x1``, ``x2`` whose coefficients are trig polynomials in ``S``."""
    ev = _Evaluator(src, denom, "S", params, "cartesian")
    return ev.val(parse_ast(src))
