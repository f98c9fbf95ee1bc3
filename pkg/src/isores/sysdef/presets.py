"""Built-in example systems and figure scenarios.

``ex0``: ``f = A1 x1 cos S + (B0 + B1 sin S) x2 + C0 x2^3``, ``g = x1 sin S``,
``mu = t^-1/4``, ``S = 2t + (4 s1/3) t^(3/4)``, resonance 1:2.

``ex2``: ``f = A1 x1 sin S + (B0 + B1 sin 2S + C0 x1^2) x2``, ``g = x1 sin S``,
``mu = t^-1/2``, ``S = t + 2 s1 t^(1/2)``, resonance 1:1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .envelope import Envelope, Phase
from .parser import parse_cartesian
from .system import CartesianSpec, Resonance, SystemSpec, ValidationError, cartesian_to_polar

EX0_DEFAULTS = {"s0": 2.0, "s1": 0.0, "A1": 0.0, "B0": -1.0, "B1": 2.5, "C0": -0.2, "eps": 0.4,
                "n": 2, "p": 1, "R_max": 5.0, "t0": 1.0}
EX2_DEFAULTS = {"s1": 0.0, "A1": 0.0, "B0": -1.0, "B1": 2.5, "C0": -1.0, "eps": 0.5,
                "n": 2, "p": 1, "R_max": 5.0, "t0": 1.0}

EX0_F = "A1*x1*cos(S) + (B0 + B1*sin(S))*x2 + C0*x2^3"
EX2_F = "A1*x1*sin(S) + (B0 + B1*sin(2*S) + C0*x1^2)*x2"
G_SRC = "x1*sin(S)"


def _merge(defaults: dict, overrides: dict, name: str) -> dict:
    unknown = set(overrides) - set(defaults)
    if unknown:
        raise ValidationError(
            f"preset {name!r} has no parameter(s) {sorted(unknown)}; declared: {sorted(defaults)}")
    out = dict(defaults)
    out.update({k: float(v) for k, v in overrides.items()})
    out["n"], out["p"] = int(out["n"]), int(out["p"])
    return out


def ex0(**overrides) -> CartesianSpec:
    P = _merge(EX0_DEFAULTS, overrides, "ex0")
    s0 = P["s0"]
    # resonance kappa*s0 = varkappa*nu0 with nu0 = 1
    fr = Fraction(s0).limit_denominator(64)
    res = Resonance(fr.denominator, fr.numerator, 1.0, s0)
    d = res.varkappa
    params = {k: P[k] for k in ("A1", "B0", "B1", "C0")}
    return CartesianSpec(
        f=parse_cartesian(EX0_F, d, params), g=parse_cartesian(G_SRC, d, params),
        resonance=res, envelope=Envelope("power", 0.25, P["t0"]), phase=Phase((s0, P["s1"])),
        n=P["n"], p=P["p"], eps=P["eps"], R_max=P["R_max"], name="ex0", params=P,
    ).validate()


def ex2(**overrides) -> CartesianSpec:
    P = _merge(EX2_DEFAULTS, overrides, "ex2")
    res = Resonance(1, 1, 1.0, 1.0)
    params = {k: P[k] for k in ("A1", "B0", "B1", "C0")}
    return CartesianSpec(
        f=parse_cartesian(EX2_F, 1, params), g=parse_cartesian(G_SRC, 1, params),
        resonance=res, envelope=Envelope("power", 0.5, P["t0"]), phase=Phase((1.0, P["s1"])),
        n=P["n"], p=P["p"], eps=P["eps"], R_max=P["R_max"], name="ex2", params=P,
    ).validate()


BASES = {"ex0": (ex0, EX0_DEFAULTS), "ex2": (ex2, EX2_DEFAULTS)}


@dataclass(frozen=True)
class Scenario:
    """A figure preset: base system, parameter overrides and simulation layout."""

    name: str
    base: str
    params: dict
    eps_values: tuple = ()
    mode: str = "locking"  # locking | drift | plain
    ic: str = "lattice"    # lattice | ring
    t_start: float = 1.0
    t_end: float = 1000.0
    description: str = ""

    def spec(self, eps: float | None = None, **overrides) -> CartesianSpec:
        P = dict(self.params)
        P.update(overrides)
        if eps is not None:
            P["eps"] = eps
        return BASES[self.base][0](**P)


SCENARIOS = {
    "fig-ex0a": Scenario("fig-ex0a", "ex0", {"B0": -1.0, "A1": 0.0, "B1": 0.0, "eps": 0.0},
                         mode="plain", t_end=1000.0,
                         description="ex0 without parametric pumping: damped amplitude"),
    "fig-ex0b": Scenario("fig-ex0b", "ex0", {"B0": -1.0, "A1": 0.0, "B1": 2.5, "C0": -0.2, "eps": 0.0},
                         mode="plain", t_end=1000.0,
                         description="ex0 deterministic pumping: steady amplitude appears"),
    "fig-ex0c": Scenario("fig-ex0c", "ex0", {"B0": -1.0, "A1": 0.0, "B1": 2.5, "C0": -0.2, "eps": 2.0 / 3.0},
                         mode="plain", t_end=1000.0,
                         description="ex0 pumping with noise"),
    "fig-ex1": Scenario("fig-ex1", "ex0", {"s0": 2.0, "s1": 0.0, "A1": 0.0, "B0": -1.0, "B1": 2.5,
                                           "C0": -0.2, "eps": 0.4},
                        mode="locking", ic="lattice", t_start=50.0, t_end=3000.0,
                        description="ex0 phase locking near rho0+ (about 1.378)"),
    "fig-ex11": Scenario("fig-ex11", "ex0", {"s0": 2.0, "s1": 8.0, "A1": 0.0, "B0": 1.0, "B1": 1.0,
                                             "C0": -0.5, "eps": 0.5},
                         eps_values=(0.0, 0.5), mode="drift", t_start=50.0, t_end=3000.0,
                         description="ex0 phase drift with rho0 = sqrt(8/3 + eps^2/2)"),
    "fig-ex2": Scenario("fig-ex2", "ex2", {"s1": 0.0, "A1": 0.0, "B0": -1.0, "B1": 2.5, "C0": -1.0,
                                           "eps": 0.5},
                        mode="locking", t_start=50.0, t_end=3000.0,
                        description="ex2 phase locking near rho0 (about 1.09)"),
    "fig-ex20": Scenario("fig-ex20", "ex2", {"B0": -1.0, "A1": 0.0, "B1": 0.0, "C0": -1.0, "eps": 0.0},
                         mode="plain", t_end=1000.0,
                         description="ex2 without pumping (B1 = 0): damped amplitude"),
    "fig-ex20b": Scenario("fig-ex20b", "ex2", {"B0": -1.0, "A1": 0.0, "B1": 2.5, "C0": -1.0, "eps": 0.0},
                          mode="locking", t_end=1000.0,
                          description="ex2 deterministic pumping with C0 = -1"),
    "fig-ex22": Scenario("fig-ex22", "ex2", {"s1": 5.0, "A1": 0.0, "B0": 0.5, "B1": 1.0, "C0": -1.0,
                                             "eps": 0.5},
                         eps_values=(0.0, 0.5), mode="drift", t_start=50.0, t_end=3000.0,
                         description="ex2 phase drift with rho0 = sqrt(2 + 3 eps^2/4)"),
}
PRESET_NAMES = ("ex0", "ex2") + tuple(SCENARIOS)


def resolve(name: str, **overrides) -> CartesianSpec:
    """Cartesian spec for a base preset or figure scenario with parameter overrides."""
    if name in BASES:
        return BASES[name][0](**overrides)
    if name in SCENARIOS:
        sc = SCENARIOS[name]
        base_defaults = BASES[sc.base][1]
        unknown = set(overrides) - set(base_defaults)
        if unknown:
            raise ValidationError(f"preset {name!r} has no parameter(s) {sorted(unknown)}")
        return sc.spec(**overrides)
    raise ValidationError(f"unknown preset {name!r}; available: {', '.join(PRESET_NAMES)}")


def resolve_polar(name: str, **overrides) -> SystemSpec:
    return cartesian_to_polar(resolve(name, **overrides))


def ic_lattice():
    """Deterministic initial-condition lattice: 7 radii times 4 slow phases."""
    radii = [round(0.3 * i, 10) for i in range(1, 8)]
    phases = [0.0, math.pi / 2, math.pi, 3 * math.pi / 2]
    return [(r, ph) for r in radii for ph in phases]


def ic_ring(rho0: float, phi0: float, radius: float, count: int):
    """``count`` points evenly spaced on a circle of ``radius`` around ``(rho0, phi0)``."""
    return [(rho0 + radius * math.cos(2 * math.pi * i / count),
             phi0 + radius * math.sin(2 * math.pi * i / count)) for i in range(count)]
