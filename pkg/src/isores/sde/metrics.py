"""Distance of a path from the locked or drifting reference solution.

Both metrics use the recorded oscillator amplitude and slow phase as proxies
for the averaged variables; the near-identity change of variables between
the two is ``O(mu)`` and is not applied.
"""

from __future__ import annotations

import math

import numpy as np

from ..sysdef.envelope import Envelope


class WindowError(ValueError):
    pass


def _window_slice(times, window):
    t0, t1 = window
    tol = 1e-9 * max(1.0, abs(t1))
    if t0 < times[0] - tol or t1 > times[-1] + tol or t1 < t0:
        raise WindowError(f"window [{t0}, {t1}] is outside the recorded span "
                          f"[{times[0]}, {times[-1]}]")
    lo = int(np.searchsorted(times, t0 - tol, side="left"))
    hi = int(np.searchsorted(times, t1 + tol, side="right"))
    return slice(lo, hi)


def branch_shift(psi0: float, phi_ref: float, period: float) -> float:
    """Multiple of ``period`` moving ``psi0`` to the representative nearest ``phi_ref``."""
    return period * round((psi0 - phi_ref) / period)


def ml_series(times, rho, psi, sol, env: Envelope, n: int, q: int, period: float):
    """M_L along a path; the phase branch is fixed by the first sample."""
    rs, ps = sol.rho(times), sol.phi(times)
    shift = branch_shift(float(psi[0]), float(ps[0]), period)
    w = env.mu_array(times) ** (n - q)
    return np.sqrt((rho - rs) ** 2 + (psi - shift - ps) ** 2 * w)


def _sup(values, status, stopped_in_window):
    if stopped_in_window and status == "exited_Rmax":
        return math.inf
    v = values[np.isfinite(values)]
    return float(v.max()) if v.size else math.inf


def metric_ML(path, sol, env: Envelope, n: int, q: int, window, period: float = 2 * math.pi):
    """Running sup of M_L over ``window``."""
    sl = _window_slice(path.times, window)
    t, r, p = path.times[sl], path.rho[sl], path.psi[sl]
    ok = np.isfinite(r)
    if not ok.any():
        return math.inf
    k = r.size if ok.all() else int(np.argmin(ok))
    vals = ml_series(t[:k], r[:k], p[:k], sol, env, n, q, period)
    return _sup(vals, path.status, k < r.size)


def metric_MD(path, drift, window):
    """Running sup of ``|rho - rho0|`` over ``window``."""
    sl = _window_slice(path.times, window)
    r = path.rho[sl]
    ok = np.isfinite(r)
    if not ok.any():
        return math.inf
    k = r.size if ok.all() else int(np.argmin(ok))
    return _sup(np.abs(r[:k] - drift.rho0), path.status, k < r.size)
