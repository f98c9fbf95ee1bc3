"""Resonance averaging, regime classification and simulation for decaying stochastic perturbations
of planar isochronous oscillators."""

__version__ = "0.1.0"
