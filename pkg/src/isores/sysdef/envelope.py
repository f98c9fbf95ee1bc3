"""Decay envelopes mu(t) and the excitation phase S(t)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import integrate, optimize

FAMILIES = ("power", "power_log")


class EnvelopeDomainError(ValueError):
    pass


def _inv_alpha(alpha: float) -> Fraction | None:
    """1/alpha as an exact integer fraction when alpha is a unit fraction, else None."""
    inv = 1.0 / alpha
    k = round(inv)
    if k >= 1 and abs(inv - k) <= 1e-12 * inv:
        return Fraction(k)
    return None


@dataclass(frozen=True)
class Envelope:
    """``mu(t) = t**-alpha`` (``power``) or ``t**-alpha * log t`` (``power_log``)."""

    family: str = "power"
    alpha: float = 0.25
    t0: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown envelope family {self.family!r}; expected one of {FAMILIES}")
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.t0 <= 0:
            raise ValueError("t0 must be positive")
        if self.family == "power_log" and self.t0 <= math.exp(1.0 / self.alpha):
            # mu is only decreasing past exp(1/alpha)
            raise ValueError(
                f"power_log envelope needs t0 > exp(1/alpha) = {math.exp(1.0 / self.alpha):.6g}")

    def _check(self, t):
        if t < self.t0 * (1 - 1e-14):
            raise EnvelopeDomainError(f"t = {t} is below t0 = {self.t0}")

    def mu(self, t: float) -> float:
        self._check(t)
        if self.family == "power":
            return t ** (-self.alpha)
        return t ** (-self.alpha) * math.log(t)

    def mu_array(self, t) -> np.ndarray:
        """Vectorised ``mu`` without the domain check."""
        t = np.asarray(t, float)
        if self.family == "power":
            return t ** (-self.alpha)
        return t ** (-self.alpha) * np.log(t)

    def ell_array(self, t) -> np.ndarray:
        t = np.asarray(t, float)
        if self.family == "power":
            return -self.alpha / t
        return -(self.alpha - 1.0 / np.log(t)) / t

    def ell(self, t: float) -> float:
        """Logarithmic derivative of mu."""
        self._check(t)
        if self.family == "power":
            return -self.alpha / t
        return -(self.alpha - 1.0 / math.log(t)) / t

    def params(self) -> tuple[int, float]:
        """``(m, chi_m)`` with ``m = floor(1/alpha)``."""
        inv = _inv_alpha(self.alpha)
        m = int(inv) if inv is not None else math.floor(1.0 / self.alpha)
        if self.family == "power" and inv is not None:
            return m, -self.alpha
        return m, 0.0

    @property
    def m(self) -> int:
        return self.params()[0]

    @property
    def chi_m(self) -> float:
        return self.params()[1]

    def integrable(self, k: float) -> bool:
        """Whether mu**k is integrable on (t0, inf)."""
        return k * self.alpha > 1.0

    def gamma(self, k: float, t: float, t_from: float | None = None) -> float:
        """Integral of mu**k from ``t_from`` (default t0) to ``t``."""
        a = self.t0 if t_from is None else t_from
        self._check(a)
        self._check(t)
        if self.family == "power":
            e = 1.0 - k * self.alpha
            if abs(e) < 1e-14:
                return math.log(t / a)
            return (t ** e - a ** e) / e
        return _power_log_integral(self.alpha, k, a, t)

    def to_json(self) -> dict:
        return {"family": self.family, "alpha": self.alpha, "t0": self.t0}

    @classmethod
    def from_json(cls, d: dict) -> "Envelope":
        return cls(d.get("family", "power"), float(d["alpha"]), float(d.get("t0", 1.0)))


def _power_log_integral(alpha, k, a, b, rtol=1e-12):
    # substitute t = e^x to tame the long range
    f = lambda x: math.exp(x * (1.0 - k * alpha)) * x ** k
    val, _ = integrate.quad(f, math.log(a), math.log(b), epsabs=0.0, epsrel=rtol, limit=500)
    return val


def mu(env: Envelope, t: float) -> float:
    return env.mu(t)


def ell(env: Envelope, t: float) -> float:
    return env.ell(t)


def envelope_params(env: Envelope) -> tuple[int, float]:
    return env.params()


def gamma(env: Envelope, k: float, t: float, t0: float | None = None) -> float:
    return env.gamma(k, t, t0)


def horizon_T_eps(env: Envelope, exponent: float, t_s: float, eps: float, l: float):
    """Length of the window on which the probability estimate is asserted.

    Returns ``math.inf`` when ``mu**exponent`` is integrable, otherwise the root
    ``T`` of ``gamma(T + t_s) - gamma(t_s) = eps**(-2(1 - l))``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if not (0.0 < l < 1.0):
        raise ValueError("l must lie in (0, 1)")
    if env.family == "power" and env.integrable(exponent):
        return math.inf
    target = eps ** (-2.0 * (1.0 - l))
    if env.family == "power":
        e = 1.0 - exponent * env.alpha
        if abs(e) < 1e-14:
            return t_s * math.expm1(target)
        # closed-form inverse of the power integral
        base = t_s ** e + e * target
        if base <= 0:
            return math.inf
        return base ** (1.0 / e) - t_s
    g = lambda T: env.gamma(exponent, T + t_s, t_s) - target
    hi = max(1.0, t_s)
    while g(hi) < 0:
        hi *= 2.0
        if hi > 1e300:
            return math.inf
    return optimize.brentq(g, 0.0, hi, xtol=1e-12 * t_s, rtol=1e-12, maxiter=500)


@dataclass(frozen=True)
class Phase:
    """Excitation phase with ``S'(t) = s0 + sum_k s_k mu(t)**k``."""

    s: tuple = (1.0,)
    offset: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "s", tuple(float(x) for x in self.s))
        if not self.s:
            raise ValueError("phase needs at least s0")

    @property
    def s0(self) -> float:
        return self.s[0]

    def coeff(self, k: int) -> float:
        return self.s[k] if k < len(self.s) else 0.0

    def rate(self, env: Envelope, t: float) -> float:
        m = env.mu(t)
        return sum(sk * m ** k for k, sk in enumerate(self.s))

    def value(self, env: Envelope, t: float) -> float:
        if env.family == "power":
            out = self.offset + self.s0 * t
            for k, sk in enumerate(self.s[1:], start=1):
                if sk == 0.0:
                    continue
                e = 1.0 - k * env.alpha
                out += sk * (math.log(t) if abs(e) < 1e-14 else t ** e / e)
            return out
        out = self.offset + self.s0 * t
        for k, sk in enumerate(self.s[1:], start=1):
            if sk:
                out += sk * env.gamma(k, t)
        return out

    def power_terms(self, env: Envelope):
        """``(coeffs, exponents, is_log)`` of the closed form, used by the kernels."""
        c, e, lg = [], [], []
        for k, sk in enumerate(self.s[1:], start=1):
            if sk == 0.0:
                continue
            ex = 1.0 - k * env.alpha
            if abs(ex) < 1e-14:
                c.append(sk)
                e.append(0.0)
                lg.append(True)
            else:
                c.append(sk / ex)
                e.append(ex)
                lg.append(False)
        return c, e, lg

    def to_json(self) -> dict:
        return {"s": list(self.s), "offset": self.offset}

    @classmethod
    def from_json(cls, d: dict) -> "Phase":
        return cls(tuple(d["s"]), float(d.get("offset", 0.0)))
