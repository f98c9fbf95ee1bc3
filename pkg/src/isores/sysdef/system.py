"""System specifications, resonance validation and the Cartesian-to-polar conversion."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Mapping

from ..trigpoly import COS, SIN, CONST, TrigPoly
from .envelope import Envelope, Phase
from .parser import CPoly, parse_cartesian, parse_expr


class ValidationError(ValueError):
    """A system definition that violates a structural or resonance requirement."""


@dataclass(frozen=True)
class Resonance:
    kappa: int
    varkappa: int
    nu0: float
    s0: float

    def validate(self) -> None:
        if int(self.kappa) != self.kappa or int(self.varkappa) != self.varkappa:
            raise ValidationError("resonance condition: kappa and varkappa must be integers")
        if self.kappa <= 0 or self.varkappa <= 0:
            raise ValidationError("resonance condition: kappa and varkappa must be positive")
        if math.gcd(int(self.kappa), int(self.varkappa)) != 1:
            raise ValidationError(
                f"resonance condition: kappa={self.kappa} and varkappa={self.varkappa} are not coprime")
        if self.nu0 <= 0 or self.s0 <= 0:
            raise ValidationError("resonance condition: nu0 and s0 must be positive")
        lhs, rhs = self.kappa * self.s0, self.varkappa * self.nu0
        if abs(lhs - rhs) > 1e-12 * abs(rhs):
            raise ValidationError(
                f"resonance condition violated: kappa*s0 = {lhs} but varkappa*nu0 = {rhs}")

    @property
    def ratio(self) -> float:
        return self.kappa / self.varkappa


def _poly_json(p: TrigPoly) -> list:
    return p.to_json()


@dataclass(frozen=True)
class SystemSpec:
    """Polar system with drift ``(nu0-free part) sum_k mu^k a_k`` and diffusion ``eps sum_k mu^k A_k``.

    ``drift[k]`` is a pair of TrigPolys in ``(r, phi, S)``; ``noise[k]`` is a
    2x2 nested tuple.  All polys share the denominator ``varkappa``.  When
    ``known_order`` is ``None`` the expansion is complete (absent orders are
    zero); otherwise orders above it are unknown.
    """

    resonance: Resonance
    envelope: Envelope
    phase: Phase
    n: int
    p: int
    eps: float
    R_max: float
    drift: Mapping[int, tuple]
    noise: Mapping[int, tuple]
    known_order: int | None = None
    r_min: float = 0.05
    name: str = "custom"
    params: Mapping[str, float] = field(default_factory=dict)

    @property
    def denom(self) -> int:
        return int(self.resonance.varkappa)

    def zero(self) -> TrigPoly:
        return TrigPoly.zero(self.denom)

    def drift_at(self, k: int) -> tuple:
        z = self.zero()
        return tuple(self.drift.get(k, (z, z)))

    def noise_at(self, k: int) -> tuple:
        z = self.zero()
        return tuple(tuple(row) for row in self.noise.get(k, ((z, z), (z, z))))

    def max_order(self) -> int:
        orders = list(self.drift) + list(self.noise)
        orders += [k for k in range(len(self.phase.s)) if self.phase.coeff(k)]
        return max(orders, default=0)

    def validate(self) -> "SystemSpec":
        self.resonance.validate()
        if abs(self.resonance.s0 - self.phase.s0) > 1e-15 * abs(self.phase.s0):
            raise ValidationError("phase s0 disagrees with the resonance s0")
        if self.n < 1 or self.p < 1:
            raise ValidationError("orders n and p must be positive integers")
        if self.eps < 0:
            raise ValidationError("eps must be non-negative")
        if self.R_max <= 0 or not (0 < self.r_min < self.R_max):
            raise ValidationError("need 0 < r_min < R_max")
        for k, pair in self.drift.items():
            if k < 1:
                raise ValidationError(f"drift order {k} must be positive")
            if k < self.n and k != 2 * self.p and any(not q.is_zero() for q in pair):
                raise ValidationError(
                    f"drift order {k} is below n={self.n} and is not the Ito-correction order 2p")
            for q in pair:
                self._check_poly(q, f"drift[{k}]")
        for k, mat in self.noise.items():
            if k < self.p and any(not q.is_zero() for row in mat for q in row):
                raise ValidationError(f"noise order {k} is below p={self.p}")
            for row in mat:
                for q in row:
                    self._check_poly(q, f"noise[{k}]")
        if self.known_order is not None and self.known_order < self.n:
            raise ValidationError("known_order must be at least n")
        return self

    def _check_poly(self, q: TrigPoly, where: str) -> None:
        if q.denom != self.denom:
            raise ValidationError(
                f"{where}: S-frequency denominator {q.denom} differs from varkappa={self.denom}")

    def with_params(self, **kw) -> "SystemSpec":
        return replace(self, **kw)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "resonance": {"kappa": self.resonance.kappa, "varkappa": self.resonance.varkappa,
                          "nu0": self.resonance.nu0},
            "envelope": self.envelope.to_json(),
            "phase": self.phase.to_json(),
            "n": self.n, "p": self.p, "eps": self.eps, "R_max": self.R_max, "r_min": self.r_min,
            "known_order": self.known_order,
            "params": dict(self.params),
            "drift": {str(k): [q.to_string("phi") for q in v] for k, v in sorted(self.drift.items())},
            "noise": {str(k): [[q.to_string("phi") for q in row] for row in v]
                      for k, v in sorted(self.noise.items())},
        }


@dataclass(frozen=True)
class CartesianSpec:
    """``dx1 = x2 dt``, ``dx2 = (-x1 + mu^n f) dt + eps mu^p g dw1`` with ``nu0 = 1``.

    ``f`` is a :class:`CPoly` in ``(x1, x2)`` and ``g`` a :class:`CPoly` in
    ``x1`` only; coefficients are trig polynomials in ``S``.
    """

    f: CPoly
    g: CPoly
    resonance: Resonance
    envelope: Envelope
    phase: Phase
    n: int
    p: int
    eps: float
    R_max: float = 5.0
    r_min: float = 0.05
    name: str = "custom"
    params: Mapping[str, float] = field(default_factory=dict)

    def validate(self) -> "CartesianSpec":
        self.resonance.validate()
        if abs(self.resonance.nu0 - 1.0) > 1e-15:
            raise ValidationError("Cartesian systems have unit natural frequency (nu0 = 1)")
        if any(b != 0 for (_, b) in self.g.terms):
            raise ValidationError("g must not depend on x2")
        for cp in (self.f, self.g):
            for coef in cp.terms.values():
                if coef.has_angle() or coef.rpows() - {0}:
                    raise ValidationError("Cartesian coefficients may depend on S only")
                if coef.denom != self.resonance.varkappa:
                    raise ValidationError("Cartesian coefficients must use denominator varkappa")
        return self

    def f_terms(self):
        """Flat term list ``(coeff, pow_x1, pow_x2, is_sin, omega_S)`` for the kernels."""
        return _cpoly_terms(self.f)

    def g_terms(self):
        return _cpoly_terms(self.g)


def _cpoly_terms(cp: CPoly):
    out = []
    for (a, b), coef in sorted(cp.terms.items()):
        for (rp, kind, j, l), c in coef.items():
            out.append((c, a, b, kind == SIN, l / coef.denom))
    return out


def _monomial_polar(a: int, b: int, denom: int) -> TrigPoly:
    """x1^a x2^b with x1 = r cos(phi), x2 = -r sin(phi)."""
    c = TrigPoly.cos(1, 0, denom)
    s = TrigPoly.sin(1, 0, denom).scale(-1.0)
    return (c ** a) * (s ** b) * TrigPoly.r(a + b, denom)


def cpoly_to_polar(cp: CPoly, denom: int) -> TrigPoly:
    out = TrigPoly.zero(denom)
    for (a, b), coef in cp.terms.items():
        out = out + coef * _monomial_polar(a, b, denom)
    return out


def cartesian_to_polar(cs: CartesianSpec) -> SystemSpec:
    """Polar form via Ito's formula for ``rho = |x|``, ``phi = -atan2(x2, x1)``."""
    cs.validate()
    d = int(cs.resonance.varkappa)
    F = cpoly_to_polar(cs.f, d)
    G = cpoly_to_polar(cs.g, d)
    cos1 = TrigPoly.cos(1, 0, d)
    sin1 = TrigPoly.sin(1, 0, d)
    rinv = TrigPoly.r(-1, d)
    zero = TrigPoly.zero(d)

    drift: dict = {}

    def put(k, a1, a2):
        if k in drift:
            b1, b2 = drift[k]
            drift[k] = (b1 + a1, b2 + a2)
        else:
            drift[k] = (a1, a2)

    if not F.is_zero():
        put(cs.n, -(F * sin1), -(rinv * F * cos1))
    noise: dict = {}
    if not G.is_zero():
        G2 = G * G
        eps2 = cs.eps ** 2
        if eps2:
            ito1 = (TrigPoly.r(-1, d) * G2 * cos1 * cos1).scale(eps2 / 2.0)
            ito2 = (TrigPoly.r(-2, d) * G2 * TrigPoly.sin(2, 0, d)).scale(-eps2 / 2.0)
            put(2 * cs.p, ito1, ito2)
        noise[cs.p] = ((-(G * sin1), zero), (-(rinv * G * cos1), zero))
    spec = SystemSpec(resonance=cs.resonance, envelope=cs.envelope, phase=cs.phase,
                      n=cs.n, p=cs.p, eps=cs.eps, R_max=cs.R_max, drift=drift, noise=noise,
                      r_min=cs.r_min, name=cs.name, params=dict(cs.params))
    return spec


# ---------------------------------------------------------------- JSON loading
def _resonance_from(d: dict, phase: Phase) -> Resonance:
    return Resonance(int(d["kappa"]), int(d["varkappa"]), float(d.get("nu0", 1.0)), phase.s0)


def load_spec(data: dict | str):
    """Build a SystemSpec (or CartesianSpec when ``frame == "cartesian"``) from JSON."""
    if isinstance(data, str):
        data = json.loads(data)
    try:
        phase = Phase.from_json(data["phase"])
        env = Envelope.from_json(data["envelope"])
        res = _resonance_from(data["resonance"], phase)
        res.validate()
        params = {k: float(v) for k, v in data.get("params", {}).items()}
        eps = float(data.get("eps", 0.0))
        params.setdefault("eps", eps)
        d = res.varkappa
        common = dict(resonance=res, envelope=env, phase=phase, n=int(data["n"]), p=int(data["p"]),
                      eps=eps, R_max=float(data.get("R_max", 5.0)),
                      r_min=float(data.get("r_min", 0.05)), name=data.get("name", "custom"),
                      params=params)
        if data.get("frame", "polar") == "cartesian":
            f = parse_cartesian(data["f"], d, params)
            g = parse_cartesian(data["g"], d, params)
            return CartesianSpec(f=f, g=g, **common).validate()
        drift = {int(k): tuple(parse_expr(e, "phi", d, params) for e in v)
                 for k, v in data.get("drift", {}).items()}
        noise = {int(k): tuple(tuple(parse_expr(e, "phi", d, params) for e in row) for row in v)
                 for k, v in data.get("noise", {}).items()}
        for k, v in drift.items():
            if len(v) != 2:
                raise ValidationError(f"drift[{k}] must have two entries")
        for k, v in noise.items():
            if len(v) != 2 or any(len(row) != 2 for row in v):
                raise ValidationError(f"noise[{k}] must be a 2x2 matrix")
        ko = data.get("known_order")
        return SystemSpec(drift=drift, noise=noise,
                          known_order=None if ko is None else int(ko), **common).validate()
    except KeyError as exc:
        raise ValidationError(f"missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(str(exc)) from exc


def load_spec_file(path) -> SystemSpec | CartesianSpec:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"malformed JSON: {exc}") from None
    return load_spec(data)
