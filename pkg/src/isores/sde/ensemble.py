"""Exceedance statistics of path ensembles over the stability horizon."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..analysis import horizon_exponent
from ..sysdef.envelope import horizon_T_eps
from .metrics import metric_MD, metric_ML
from .simulate import SimConfig, simulate

WINDOW_SAMPLES = 20_000


@dataclass
class LockingTarget:
    """Reference for M_L: particular solution plus the orders it lives on."""

    sol: object
    n: int
    p: int
    q: int
    period: float = 2 * math.pi


@dataclass
class DriftTarget:
    drift: object
    n: int
    p: int
    q: int


@dataclass
class ExceedanceStats:
    metric: str
    eps1: float
    window: tuple
    n_exceed: int
    n_total: int
    p_hat: float
    ci95_halfwidth: float
    horizon: float = math.inf
    horizon_capped: bool = False
    sups: list = field(default_factory=list)
    terminal_rho: list = field(default_factory=list)
    statuses: list = field(default_factory=list)

    def to_json(self, with_paths: bool = False) -> dict:
        d = asdict(self)
        d["window"] = list(self.window)
        if not with_paths:
            for k in ("sups", "terminal_rho", "statuses"):
                d.pop(k)
        return d


def proportion_ci(k: int, n: int) -> tuple[float, float]:
    """Point estimate and normal-approximation 95% half-width."""
    p = k / n
    return p, 1.959963984540054 * math.sqrt(p * (1 - p) / n)


def horizon_window(system, target, t_s: float, t_end: float, l: float = 0.5):
    """``(window, T, capped)``: horizon window using the exponent of the target regime."""
    mode = "locking" if isinstance(target, LockingTarget) else "drift"
    exponent = horizon_exponent(mode, target.n, target.p, target.q)
    if system.eps == 0:
        T = math.inf
    else:
        T = horizon_T_eps(system.envelope, exponent, t_s, system.eps, l)
    capped = not (t_s + T <= t_end)
    return (t_s, min(t_s + T, t_end)), T, capped


def ensemble(system, cfg: SimConfig, ics, target, eps1: float, l: float = 0.5,
             window=None) -> ExceedanceStats:
    """Run ``cfg.n_paths`` paths and count sup-metric exceedances of ``eps1`` in the window."""
    if window is None:
        window, T, capped = horizon_window(system, target, cfg.t_start, cfg.t_end, l)
    else:
        T, capped = window[1] - window[0], False
    if cfg.record_stride is None:
        dt = cfg.step(system.resonance.nu0)
        steps = max(1, int((window[1] - window[0]) / dt))
        cfg = replace(cfg, record_stride=max(1, math.ceil(steps / WINDOW_SAMPLES)))
    paths = simulate(system, cfg, ics, keep=window)
    sups, term, stats = [], [], []
    for path in paths:
        if isinstance(target, LockingTarget):
            s = metric_ML(path, target.sol, system.envelope, target.n, target.q, window,
                          target.period)
            name = "M_L"
        else:
            s = metric_MD(path, target.drift, window)
            name = "M_D"
        if path.status == "exited_Rmax":
            s = math.inf
        sups.append(s)
        term.append(path.final_rho)
        stats.append(path.status)
    k = sum(1 for s in sups if s >= eps1)
    p, hw = proportion_ci(k, len(sups))
    return ExceedanceStats(name, eps1, tuple(window), k, len(sups), p, hw, T, capped,
                           sups, term, stats)


def terminal_fraction(stats: ExceedanceStats, center: float, radius: float) -> float:
    """Share of non-absorbed paths whose final amplitude lies within ``radius`` of ``center``."""
    vals = [r for r, s in zip(stats.terminal_rho, stats.statuses) if s != "absorbed_at_rmin"]
    if not vals:
        return 0.0
    vals = np.array(vals)
    return float(np.mean(np.abs(vals - center) < radius))
