"""Stochastic and deterministic path simulation, metrics and ensembles."""

from .ensemble import (DriftTarget, ExceedanceStats, LockingTarget, ensemble, horizon_window,
                       proportion_ci, terminal_fraction)
from .metrics import WindowError, metric_MD, metric_ML
from .rng import NormalStreams, path_generator, path_seed, splitmix64
from .simulate import (FRAMES, PathRecord, SimConfig, SimulationError, phase_values,
                       simulate, simulate_cartesian, simulate_polar, simulate_truncated)

__all__ = [
    "DriftTarget", "ExceedanceStats", "LockingTarget", "ensemble", "horizon_window",
    "proportion_ci", "terminal_fraction", "WindowError", "metric_MD", "metric_ML",
    "NormalStreams", "path_generator", "path_seed", "splitmix64", "FRAMES", "PathRecord",
    "SimConfig", "SimulationError", "phase_values", "simulate", "simulate_cartesian",
    "simulate_polar", "simulate_truncated",
]
