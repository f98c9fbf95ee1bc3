"""System definitions: envelopes, phase, parser, specs and presets."""

from .envelope import (Envelope, EnvelopeDomainError, Phase, ell, envelope_params, gamma,
                       horizon_T_eps, mu)
from .parser import CPoly, ParseError, parse_cartesian, parse_expr
from .system import (CartesianSpec, Resonance, SystemSpec, ValidationError, cartesian_to_polar,
                     load_spec, load_spec_file)
from . import presets

__all__ = [
    "Envelope", "EnvelopeDomainError", "Phase", "ell", "envelope_params", "gamma", "horizon_T_eps",
    "mu", "CPoly", "ParseError", "parse_cartesian", "parse_expr", "CartesianSpec", "Resonance",
    "SystemSpec", "ValidationError", "cartesian_to_polar", "load_spec", "load_spec_file", "presets",
]
