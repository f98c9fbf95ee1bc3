"""Trigonometric polynomials in (r, angle, S).

A :class:`TrigPoly` is a finite sum of terms::

    coeff * r**rpow * trig(jpsi * angle + (lnum / denom) * S)

where ``trig`` is ``cos`` or ``sin`` (or the constant 1 when both
frequencies vanish).  The angle is the fast phase ``phi`` before the
resonant substitution and the slow phase ``psi`` after it; the algebra does
not care which.  Frequencies in ``S`` are stored as integer numerators over
one global denominator so that resonance cancellation is decided exactly.

Every instance is immutable and kept in canonical form:

* one term per key ``(rpow, kind, jpsi, lnum)``;
* the angle pair ``(jpsi, lnum)`` is lexicographically positive (``sin``
  flips its coefficient when the angle is negated, ``cos`` does not);
* terms with ``|coeff| < 1e-13 * max|coeff|`` are dropped.
"""

from __future__ import annotations

import math
from collections import defaultdict
from typing import Iterable, Iterator, Mapping

import numpy as np

CONST, COS, SIN = 0, 1, 2
KIND_NAMES = {CONST: "const", COS: "cos", SIN: "sin"}
KIND_CODES = {v: k for k, v in KIND_NAMES.items()}

DROP_RTOL = 1e-13

Key = tuple  # (rpow, kind, jpsi, lnum)


class TrigPolyError(ValueError):
    """Structural misuse of the algebra (mismatched denominators, bad preconditions)."""


class TrigDomainError(ValueError):
    """Evaluation outside the domain of the polynomial (r = 0 with negative powers)."""


def _canonical_angle(kind: int, j: int, l: int, c: float):
    if j == 0 and l == 0:
        if kind == SIN:
            return None
        return CONST, 0, 0, c
    if kind == CONST:
        raise TrigPolyError("const term with nonzero frequency")
    if j < 0 or (j == 0 and l < 0):
        j, l = -j, -l
        if kind == SIN:
            c = -c
    return kind, j, l, c


def _canonicalize(raw: Iterable[tuple]) -> dict:
    acc: dict = defaultdict(float)
    for c, rpow, kind, j, l in raw:
        if c == 0.0:
            continue
        res = _canonical_angle(kind, j, l, c)
        if res is None:
            continue
        kind, j, l, c = res
        acc[(rpow, kind, j, l)] += c
    if not acc:
        return {}
    cmax = max(abs(c) for c in acc.values())
    cut = DROP_RTOL * cmax
    return {k: c for k, c in acc.items() if abs(c) >= cut and c != 0.0}


class TrigPoly:
    """Immutable trigonometric polynomial; see the module docstring."""

    __slots__ = ("denom", "_terms", "_arrays")

    def __init__(self, terms: Mapping[Key, float] | Iterable[tuple] = (), denom: int = 1):
        if int(denom) != denom or denom <= 0:
            raise TrigPolyError(f"denominator must be a positive integer, got {denom!r}")
        self.denom = int(denom)
        if isinstance(terms, Mapping):
            raw = ((c, *k) for k, c in terms.items())
        else:
            raw = terms
        self._terms = _canonicalize(raw)
        self._arrays = None

    # ------------------------------------------------------------------ builders
    @classmethod
    def const(cls, c: float, denom: int = 1) -> "TrigPoly":
        return cls([(float(c), 0, CONST, 0, 0)], denom)

    @classmethod
    def zero(cls, denom: int = 1) -> "TrigPoly":
        return cls((), denom)

    @classmethod
    def term(cls, coeff: float, rpow: int = 0, kind: str | int = "const",
             jpsi: int = 0, lnum: int = 0, denom: int = 1) -> "TrigPoly":
        if isinstance(kind, str):
            kind = KIND_CODES[kind]
        if kind == CONST and (jpsi or lnum):
            kind = COS
        return cls([(float(coeff), int(rpow), kind, int(jpsi), int(lnum))], denom)

    @classmethod
    def r(cls, power: int = 1, denom: int = 1) -> "TrigPoly":
        return cls([(1.0, int(power), CONST, 0, 0)], denom)

    @classmethod
    def cos(cls, jpsi: int = 0, lnum: int = 0, denom: int = 1) -> "TrigPoly":
        return cls.term(1.0, 0, COS, jpsi, lnum, denom)

    @classmethod
    def sin(cls, jpsi: int = 0, lnum: int = 0, denom: int = 1) -> "TrigPoly":
        return cls.term(1.0, 0, SIN, jpsi, lnum, denom)

    # ------------------------------------------------------------------ access
    @property
    def terms(self) -> dict:
        return dict(self._terms)

    def items(self) -> Iterator[tuple[Key, float]]:
        return iter(sorted(self._terms.items()))

    def __len__(self) -> int:
        return len(self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    def is_const(self) -> bool:
        return all(k == (0, CONST, 0, 0) for k in self._terms)

    def const_value(self) -> float:
        return self._terms.get((0, CONST, 0, 0), 0.0)

    def max_abs_coeff(self) -> float:
        return max((abs(c) for c in self._terms.values()), default=0.0)

    def has_S(self) -> bool:
        return any(k[3] != 0 for k in self._terms)

    def has_angle(self) -> bool:
        return any(k[2] != 0 for k in self._terms)

    def rpows(self) -> set[int]:
        return {k[0] for k in self._terms}

    def _check(self, other: "TrigPoly") -> None:
        if self.denom != other.denom:
            raise TrigPolyError(
                f"S-frequency denominator mismatch: {self.denom} vs {other.denom}")

    def _lift(self, other) -> "TrigPoly":
        if isinstance(other, TrigPoly):
            self._check(other)
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return TrigPoly.const(float(other), self.denom)
        return NotImplemented

    # ------------------------------------------------------------------ algebra
    def __add__(self, other):
        other = self._lift(other)
        if other is NotImplemented:
            return other
        raw = [(c, *k) for k, c in self._terms.items()]
        raw += [(c, *k) for k, c in other._terms.items()]
        return TrigPoly(raw, self.denom)

    __radd__ = __add__

    def __neg__(self) -> "TrigPoly":
        return self.scale(-1.0)

    def __sub__(self, other):
        other = self._lift(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        other = self._lift(other)
        if other is NotImplemented:
            return other
        return other + (-self)

    def scale(self, a: float) -> "TrigPoly":
        a = float(a)
        if a == 0.0:
            return TrigPoly.zero(self.denom)
        return TrigPoly([(a * c, *k) for k, c in self._terms.items()], self.denom)

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return self.scale(other)
        if not isinstance(other, TrigPoly):
            return NotImplemented
        self._check(other)
        raw = []
        for (ra, ka, ja, la), ca in self._terms.items():
            for (rb, kb, jb, lb), cb in other._terms.items():
                raw.extend(_product_terms(ca, ra, ka, ja, la, cb, rb, kb, jb, lb))
        return TrigPoly(raw, self.denom)

    __rmul__ = __mul__

    def __truediv__(self, a):
        if isinstance(a, (int, float, np.floating, np.integer)):
            return self.scale(1.0 / float(a))
        return NotImplemented

    def __pow__(self, k: int) -> "TrigPoly":
        if int(k) != k or k < 0:
            raise TrigPolyError("only non-negative integer powers of a TrigPoly are defined")
        out = TrigPoly.const(1.0, self.denom)
        base = self
        k = int(k)
        while k:
            if k & 1:
                out = out * base
            base = base * base
            k >>= 1
        return out

    # ------------------------------------------------------------------ calculus
    def diff(self, var: str) -> "TrigPoly":
        """Exact partial derivative in ``r``, ``psi`` (the angle) or ``S``."""
        raw = []
        if var == "r":
            for (rp, kind, j, l), c in self._terms.items():
                if rp != 0:
                    raw.append((c * rp, rp - 1, kind, j, l))
            return TrigPoly(raw, self.denom)
        if var in ("psi", "phi", "angle"):
            freq = lambda j, l: float(j)
        elif var == "S":
            freq = lambda j, l: l / self.denom
        else:
            raise TrigPolyError(f"unknown variable {var!r}")
        for (rp, kind, j, l), c in self._terms.items():
            w = freq(j, l)
            if kind == CONST or w == 0.0:
                continue
            if kind == COS:
                raw.append((-c * w, rp, SIN, j, l))
            else:
                raw.append((c * w, rp, COS, j, l))
        return TrigPoly(raw, self.denom)

    def average_S(self) -> "TrigPoly":
        """Mean over ``S`` in ``[0, 2*pi*denom]``: keeps the ``lnum = 0`` terms."""
        return TrigPoly({k: c for k, c in self._terms.items() if k[3] == 0}, self.denom)

    def average_psi(self) -> "TrigPoly":
        """Mean over the angle; the input must already be free of ``S``."""
        if self.has_S():
            raise TrigPolyError("average_psi needs an S-free polynomial; average over S first")
        return TrigPoly({k: c for k, c in self._terms.items() if k[2] == 0}, self.denom)

    def antiderivative_S(self) -> "TrigPoly":
        """Zero-mean primitive in ``S`` of a zero-mean polynomial."""
        if not self.average_S().is_zero():
            raise TrigPolyError("antiderivative_S requires a zero S-mean input")
        raw = []
        for (rp, kind, j, l), c in self._terms.items():
            w = l / self.denom
            if kind == COS:
                raw.append((c / w, rp, SIN, j, l))
            else:
                raw.append((-c / w, rp, COS, j, l))
        return TrigPoly(raw, self.denom)

    def antiderivative_psi(self) -> "TrigPoly":
        """Zero-mean primitive in the angle of an S-free, zero-angle-mean polynomial."""
        if self.has_S():
            raise TrigPolyError("antiderivative_psi needs an S-free polynomial")
        if not self.average_psi().is_zero():
            raise TrigPolyError("antiderivative_psi requires a zero angle-mean input")
        raw = []
        for (rp, kind, j, l), c in self._terms.items():
            if kind == COS:
                raw.append((c / j, rp, SIN, j, l))
            else:
                raw.append((-c / j, rp, COS, j, l))
        return TrigPoly(raw, self.denom)

    def substitute_phase(self, kappa: int, varkappa: int) -> "TrigPoly":
        """Replace ``phi`` by ``(kappa/varkappa) S + psi``; result has denominator ``varkappa``."""
        if varkappa % self.denom:
            raise TrigPolyError(
                f"denominator {self.denom} does not divide varkappa={varkappa}")
        scale = varkappa // self.denom
        raw = [(c, rp, kind, j, j * kappa + l * scale)
               for (rp, kind, j, l), c in self._terms.items()]
        return TrigPoly(raw, varkappa)

    def with_denom(self, denom: int) -> "TrigPoly":
        """Re-express over a multiple of the current denominator."""
        if denom % self.denom:
            raise TrigPolyError(f"{denom} is not a multiple of {self.denom}")
        s = denom // self.denom
        return TrigPoly([(c, rp, kind, j, l * s) for (rp, kind, j, l), c in self._terms.items()],
                        denom)

    # ------------------------------------------------------------------ evaluation
    def arrays(self):
        """Flat term arrays ``(coeff, rpow, jpsi, omegaS, is_sin)`` for vectorised evaluation."""
        if self._arrays is None:
            items = sorted(self._terms.items())
            self._arrays = (
                np.array([c for _, c in items], dtype=np.float64),
                np.array([k[0] for k, _ in items], dtype=np.int64),
                np.array([k[2] for k, _ in items], dtype=np.float64),
                np.array([k[3] / self.denom for k, _ in items], dtype=np.float64),
                np.array([k[1] == SIN for k, _ in items], dtype=np.bool_),
            )
        return self._arrays

    def __call__(self, r, psi=0.0, S=0.0):
        return self.eval(r, psi, S)

    def eval(self, r, psi=0.0, S=0.0):
        scalar = np.isscalar(r) and np.isscalar(psi) and np.isscalar(S)
        if scalar:
            total = 0.0
            for (rp, kind, j, l), c in self._terms.items():
                if rp < 0 and r == 0:
                    raise TrigDomainError("r = 0 with negative powers of r")
                v = c * r**rp if rp else c
                if kind == COS:
                    v *= math.cos(j * psi + (l / self.denom) * S)
                elif kind == SIN:
                    v *= math.sin(j * psi + (l / self.denom) * S)
                total += v
            return total
        r, psi, S = np.broadcast_arrays(np.asarray(r, float), np.asarray(psi, float),
                                        np.asarray(S, float))
        coeff, rpow, jpsi, om, is_sin = self.arrays()
        if coeff.size == 0:
            return np.zeros(r.shape)
        if (rpow < 0).any() and (r == 0).any():
            raise TrigDomainError("r = 0 with negative powers of r")
        shape = r.shape
        rr, pp, ss = r.reshape(-1, 1), psi.reshape(-1, 1), S.reshape(-1, 1)
        ang = jpsi * pp + om * ss
        trig = np.where(is_sin, np.sin(ang), np.cos(ang))
        out = (coeff * rr**rpow * trig).sum(axis=1)
        return out.reshape(shape)

    # ------------------------------------------------------------------ comparison / io
    def allclose(self, other: "TrigPoly", atol: float = 1e-12) -> bool:
        """Term-set equality with an absolute coefficient tolerance."""
        self._check(other)
        keys = set(self._terms) | set(other._terms)
        return all(abs(self._terms.get(k, 0.0) - other._terms.get(k, 0.0)) <= atol for k in keys)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TrigPoly):
            return NotImplemented
        return self.denom == other.denom and self._terms == other._terms

    def __hash__(self):
        return hash((self.denom, frozenset(self._terms.items())))

    def to_json(self) -> list[dict]:
        return [{"coeff": c, "rpow": rp, "kind": KIND_NAMES[kind], "jpsi": j, "lnum": l}
                for (rp, kind, j, l), c in self.items()]

    @classmethod
    def from_json(cls, data: Iterable[Mapping], denom: int) -> "TrigPoly":
        return cls([(float(t["coeff"]), int(t["rpow"]), KIND_CODES[t["kind"]],
                     int(t["jpsi"]), int(t["lnum"])) for t in data], denom)

    def to_string(self, angle: str = "psi") -> str:
        """Print in the ``parse_expr`` grammar; parsing the output restores the poly exactly."""
        if not self._terms:
            return "0"
        parts = []
        for (rp, kind, j, l), c in self.items():
            factors = [repr(abs(c))]
            if rp:
                factors.append("r" if rp == 1 else f"r^{rp}")
            if kind != CONST:
                factors.append(f"{KIND_NAMES[kind]}({_angle_str(j, l, self.denom, angle)})")
            body = "*".join(factors)
            parts.append(("-" if c < 0 else "+") + body)
        s = "".join(parts)
        return s[1:] if s.startswith("+") else s

    def __repr__(self) -> str:
        return f"TrigPoly({self.to_string()!r}, denom={self.denom})"


def _angle_str(j: int, l: int, denom: int, angle: str) -> str:
    bits = []
    if j:
        bits.append(angle if j == 1 else f"{j}*{angle}")
    if l:
        g = math.gcd(abs(l), denom)
        num, den = l // g, denom // g
        mag = abs(num)
        coef = "" if (mag == 1 and den == 1) else (f"{mag}*" if den == 1 else f"{mag}/{den}*")
        sign = "-" if num < 0 else ("+" if bits else "")
        bits.append(f"{sign}{coef}S")
    return "".join(bits)


def _product_terms(ca, ra, ka, ja, la, cb, rb, kb, jb, lb):
    """Product-to-sum expansion of two single terms."""
    c = ca * cb
    rp = ra + rb
    if ka == CONST:
        return [(c, rp, kb, jb, lb)]
    if kb == CONST:
        return [(c, rp, ka, ja, la)]
    h = 0.5 * c
    sj, sl = ja + jb, la + lb
    dj, dl = ja - jb, la - lb
    if ka == COS and kb == COS:
        return [(h, rp, COS, dj, dl), (h, rp, COS, sj, sl)]
    if ka == SIN and kb == SIN:
        return [(h, rp, COS, dj, dl), (-h, rp, COS, sj, sl)]
    if ka == SIN and kb == COS:
        return [(h, rp, SIN, sj, sl), (h, rp, SIN, dj, dl)]
    # cos a * sin b
    return [(h, rp, SIN, sj, sl), (-h, rp, SIN, dj, dl)]


def zero_like(p: TrigPoly) -> TrigPoly:
    return TrigPoly.zero(p.denom)


# Module-level functional aliases mirroring the method API.
def add(a: TrigPoly, b: TrigPoly) -> TrigPoly:
    a._check(b)
    return a + b


def mul(a: TrigPoly, b: TrigPoly) -> TrigPoly:
    a._check(b)
    return a * b


def diff(a: TrigPoly, var: str) -> TrigPoly:
    return a.diff(var)


def substitute_phase(a: TrigPoly, kappa: int, varkappa: int) -> TrigPoly:
    return a.substitute_phase(kappa, varkappa)


def average_S(a: TrigPoly) -> TrigPoly:
    return a.average_S()


def average_psi(a: TrigPoly) -> TrigPoly:
    return a.average_psi()


def antiderivative_S(a: TrigPoly) -> TrigPoly:
    return a.antiderivative_S()


def eval_poly(a: TrigPoly, r, psi=0.0, S=0.0):
    return a.eval(r, psi, S)
