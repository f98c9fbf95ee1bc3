"""Path simulation in the Cartesian, polar and averaged frames."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from ..sysdef.envelope import Envelope, Phase
from ..sysdef.system import CartesianSpec, SystemSpec, ValidationError
from ..trigpoly import SIN, TrigPoly
from . import kernels
from .rng import NormalStreams

FRAMES = ("cartesian", "polar", "truncated", "limiting", "truncated2")
STATUS_NAMES = {kernels.RUNNING: "completed", kernels.ABSORBED: "absorbed_at_rmin",
                kernels.EXITED: "exited_Rmax"}
MAX_SAMPLES = 100_000
CHUNK = 4096
BATCH = 16


class SimulationError(ValueError):
    pass


def worker_count(requested: int | None = None) -> int:
    n = requested or os.cpu_count() or 1
    cap = os.environ.get("ISORES_THREADS")
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


@dataclass
class SimConfig:
    t_start: float
    t_end: float
    dt: float | None = None
    frame: str = "cartesian"
    seed: int = 0
    n_paths: int = 1
    r_min: float = 0.05
    record_stride: int | None = None
    rk_tol: float = 1e-8
    workers: int | None = None

    def requested_dt(self, nu0: float = 1.0) -> float:
        return self.dt if self.dt is not None else 2.5e-3 * 2 * math.pi / nu0

    def n_steps(self, nu0: float = 1.0) -> int:
        return max(1, math.ceil((self.t_end - self.t_start) / self.requested_dt(nu0) - 1e-9))

    def step(self, nu0: float = 1.0) -> float:
        """Actual step: the requested one shrunk so the grid ends exactly at ``t_end``."""
        return (self.t_end - self.t_start) / self.n_steps(nu0)

    def stride(self, nu0: float = 1.0) -> int:
        if self.record_stride:
            return int(self.record_stride)
        return max(1, math.ceil(self.n_steps(nu0) / MAX_SAMPLES))

    def validate(self, env: Envelope, nu0: float = 1.0, strict_dt: bool = True) -> "SimConfig":
        if self.frame not in FRAMES:
            raise ValidationError(f"unknown frame {self.frame!r}; expected one of {FRAMES}")
        if not self.t_end > self.t_start:
            raise ValidationError("t_end must exceed t_start")
        if self.t_start < env.t0:
            raise ValidationError(f"t_start = {self.t_start} is below the envelope t0 = {env.t0}")
        dt = self.requested_dt(nu0)
        if dt <= 0:
            raise ValidationError("dt must be positive")
        if strict_dt and dt > 0.01 * 2 * math.pi / nu0 * (1 + 1e-12):
            raise ValidationError(f"dt = {dt} exceeds 0.01 of the natural period")
        if self.n_paths < 1:
            raise ValidationError("n_paths must be at least 1")
        if self.r_min <= 0:
            raise ValidationError("r_min must be positive")
        return self

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class PathRecord:
    """One path; ``states`` holds (x1, x2), (rho, phi) or (rho, psi) per recorded time."""

    times: np.ndarray
    states: np.ndarray
    rho: np.ndarray
    psi: np.ndarray
    status: str
    frame: str
    index: int = 0
    final_rho: float = math.nan

    @property
    def n_valid(self) -> int:
        ok = np.isfinite(self.rho)
        return int(ok.sum()) if ok.all() else int(np.argmin(ok))

    def valid(self):
        k = self.n_valid
        return self.times[:k], self.rho[:k], self.psi[:k]


# ---------------------------------------------------------------- shared time grid
def phase_values(env: Envelope, phase: Phase, t: np.ndarray, start: float | None = None) -> np.ndarray:
    """S on an increasing grid: closed form for the power family, Simpson sums otherwise."""
    t = np.asarray(t, float)
    if env.family == "power":
        out = phase.offset + phase.s0 * t
        for c, e, lg in zip(*phase.power_terms(env)):
            out = out + (c * np.log(t) if lg else c * t ** e)
        return out
    rate = lambda x: sum(sk * mu_values(env, x) ** k for k, sk in enumerate(phase.s))
    mid = 0.5 * (t[1:] + t[:-1])
    inc = (t[1:] - t[:-1]) / 6 * (rate(t[:-1]) + 4 * rate(mid) + rate(t[1:]))
    s0 = phase.value(env, float(t[0])) if start is None else start
    return s0 + np.concatenate([[0.0], np.cumsum(inc)])


def mu_values(env: Envelope, t) -> np.ndarray:
    return env.mu_array(t)


class _Grid:
    """Time, mu and S on the step grid, built one chunk at a time.

    Chunks must be requested in increasing order when S has no closed form,
    since the Simpson sums carry over from the previous chunk.
    """

    def __init__(self, env, phase, cfg, nu0):
        self.env, self.phase = env, phase
        self.dt, self.t0 = cfg.step(nu0), cfg.t_start
        self.S0 = float(phase_values(env, phase, np.array([cfg.t_start]))[0])
        self._carry = {0: self.S0} if env.family != "power" else None

    def times(self, i0, i1):
        return self.t0 + self.dt * np.arange(i0, i1)

    def chunk(self, i0, i1):
        t = self.times(i0, i1 + 1)
        if self._carry is None:
            S = phase_values(self.env, self.phase, t)
        else:
            S = phase_values(self.env, self.phase, t, start=self._carry.pop(i0))
            self._carry[i1] = S[-1]
        return t[:-1], mu_values(self.env, t[:-1]), S[:-1]


def _trig(is_sin, x):
    return np.sin(x) if is_sin else np.cos(x)


# ---------------------------------------------------------------- models
class _CartesianModel:
    width = 1

    def __init__(self, cs: CartesianSpec, cfg: SimConfig):
        self.cs, self.cfg = cs, cfg
        self.grid = _Grid(cs.envelope, cs.phase, cfg, 1.0)
        self.dt, self.t0 = self.grid.dt, cfg.t_start
        ft, gt = cs.f_terms(), cs.g_terms()
        self.fpx1 = np.array([x[1] for x in ft], dtype=np.int64)
        self.fpx2 = np.array([x[2] for x in ft], dtype=np.int64)
        self.gpx1 = np.array([x[1] for x in gt], dtype=np.int64)
        self.ft, self.gt = ft, gt
        self.ratio = cs.resonance.kappa / cs.resonance.varkappa

    def tables(self, i0, i1):
        _, mu, S = self.grid.chunk(i0, i1)
        dt, cs = self.dt, self.cs
        fco = np.empty((i1 - i0, len(self.ft)))
        for j, (c, _, _, s, w) in enumerate(self.ft):
            fco[:, j] = c * mu ** cs.n * dt * _trig(s, w * S)
        gco = np.empty((i1 - i0, len(self.gt)))
        for j, (c, _, _, s, w) in enumerate(self.gt):
            gco[:, j] = cs.eps * c * mu ** cs.p * math.sqrt(dt) * _trig(s, w * S)
        return fco, gco

    def init_state(self, ics):
        phi = np.array([ic[1] for ic in ics]) + self.ratio * self.grid.S0
        r = np.array([ic[0] for ic in ics], float)
        return [r * np.cos(phi), -r * np.sin(phi)]

    def step(self, state, tab, normals, status, i0, rec, base, stride):
        fco, gco = tab
        kernels.cartesian_steps(state[0], state[1], status, self.fpx1, self.fpx2, fco, self.gpx1,
                                gco, normals, self.dt, self.cs.R_max, stride, i0, rec[0], rec[1],
                                base)

    def derive(self, times, a, b, psi0):
        rho = np.hypot(a, b)
        S = phase_values(self.cs.envelope, self.cs.phase, times)
        raw = np.mod(-np.arctan2(b, a) - self.ratio * S + math.pi, 2 * math.pi) - math.pi
        ok = np.isfinite(raw)
        psi = np.full_like(raw, np.nan)
        if ok.any():
            k = int(np.argmin(ok)) if not ok.all() else raw.size
            un = np.unwrap(raw[:k])
            un += 2 * math.pi * round((psi0 - un[0]) / (2 * math.pi))
            psi[:k] = un
        return rho, psi


class _PolarModel:
    width = 2

    def __init__(self, spec: SystemSpec, cfg: SimConfig):
        self.spec, self.cfg = spec, cfg
        nu0 = spec.resonance.nu0
        self.nu0 = nu0
        self.grid = _Grid(spec.envelope, spec.phase, cfg, nu0)
        self.dt, self.t0 = self.grid.dt, cfg.t_start
        terms = []
        for k, pair in spec.drift.items():
            for s, P in enumerate(pair):
                terms += [(s, k, 1.0, key, c, P.denom) for key, c in P.items()]
        for k, mat in spec.noise.items():
            for a in range(2):
                for b in range(2):
                    P = mat[a][b]
                    terms += [(2 + 2 * a + b, k, spec.eps, key, c, P.denom) for key, c in P.items()]
        self.terms = terms
        self.slot = np.array([x[0] for x in terms], dtype=np.int64)
        self.rpow = np.array([x[3][0] for x in terms], dtype=np.int64)
        self.jphi = np.array([float(x[3][2]) for x in terms])
        self.ratio = spec.resonance.kappa / spec.resonance.varkappa

    def tables(self, i0, i1):
        t, mu, S = self.grid.chunk(i0, i1)
        coef = np.empty((i1 - i0, len(self.terms)))
        sph = np.empty_like(coef)
        for j, (slot, k, scale, (rp, kind, jp, l), c, d) in enumerate(self.terms):
            coef[:, j] = scale * c * mu ** k
            sph[:, j] = (l / d) * S - (0.5 * math.pi if kind == SIN else 0.0)
        nu_t = self.nu0 * (t - self.t0)
        return coef, sph, nu_t

    def init_state(self, ics):
        r = np.array([ic[0] for ic in ics], float)
        phi = np.array([ic[1] for ic in ics]) + self.ratio * self.grid.S0
        return [r, phi]

    def step(self, state, tab, normals, status, i0, rec, base, stride):
        coef, sph, nu_t = tab
        kernels.polar_steps(state[0], state[1], status, self.slot, self.rpow, self.jphi, coef,
                            sph, nu_t, normals, self.dt, self.cfg.r_min, self.spec.R_max, stride,
                            i0, rec[0], rec[1], base)

    def derive(self, times, r, phd, psi0):
        phi = phd + self.nu0 * (times - self.t0)
        S = phase_values(self.spec.envelope, self.spec.phase, times)
        return r, phi - self.ratio * S


# ---------------------------------------------------------------- driver
class _Collector:
    """Keeps record slots ``[lo, hi)``; everything else is dropped."""

    def __init__(self, n_paths, lo, hi):
        self.lo, self.hi = lo, hi
        self.a = np.full((n_paths, hi - lo), np.nan)
        self.b = np.full((n_paths, hi - lo), np.nan)

    def start(self, slot, a, b):
        if self.lo <= slot < self.hi:
            self.a[:, slot - self.lo], self.b[:, slot - self.lo] = a, b

    def feed(self, lo, hi, a, b):
        x0, x1 = max(lo, self.lo), min(hi, self.hi)
        if x0 < x1:
            self.a[:, x0 - self.lo:x1 - self.lo] = a[:, x0 - lo:x1 - lo]
            self.b[:, x0 - self.lo:x1 - self.lo] = b[:, x0 - lo:x1 - lo]


def drive(model, ics, cfg: SimConfig, consumer):
    """Advance all paths chunk by chunk; ``consumer.feed(lo, hi, a, b)`` gets record slots ``[lo, hi)``."""
    n = cfg.n_paths
    nu0 = getattr(model, "nu0", 1.0)
    n_steps, stride = cfg.n_steps(nu0), cfg.stride(nu0)
    ics = [ics[i % len(ics)] for i in range(n)]
    batches = [list(range(s, min(s + BATCH, n))) for s in range(0, n, BATCH)]
    states = [model.init_state([ics[i] for i in b]) for b in batches]
    status = [np.zeros(len(b), dtype=np.int64) for b in batches]
    streams = [NormalStreams(cfg.seed, b, model.width) for b in batches]
    consumer.start(0, np.concatenate([s[0] for s in states]), np.concatenate([s[1] for s in states]))
    workers = min(worker_count(cfg.workers), len(batches))
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        for i0 in range(0, n_steps, CHUNK):
            i1 = min(i0 + CHUNK, n_steps)
            tab = model.tables(i0, i1)
            base = i0 // stride + 1
            width = i1 // stride - i0 // stride

            def work(k):
                normals = streams[k].draw(i1 - i0)
                rec = (np.full((len(batches[k]), width), np.nan),
                       np.full((len(batches[k]), width), np.nan))
                model.step(states[k], tab, normals, status[k], i0, rec, base, stride)
                return rec

            recs = list(pool.map(work, range(len(batches)))) if pool else [work(k) for k in range(len(batches))]
            if width:
                consumer.feed(base, base + width, np.concatenate([r[0] for r in recs]),
                              np.concatenate([r[1] for r in recs]))
    finally:
        if pool:
            pool.shutdown()
    final = (np.concatenate([s[0] for s in states]), np.concatenate([s[1] for s in states]))
    return final, np.concatenate(status)


def _make_model(system, cfg):
    if cfg.frame == "cartesian":
        if not isinstance(system, CartesianSpec):
            raise SimulationError("the Cartesian frame needs a Cartesian system")
        return _CartesianModel(system, cfg)
    if cfg.frame == "polar":
        if not isinstance(system, SystemSpec):
            raise SimulationError("the polar frame needs a polar SystemSpec")
        return _PolarModel(system, cfg)
    raise SimulationError(f"frame {cfg.frame!r} is not stochastic; use simulate_truncated")


def _simulate_sde(system, cfg: SimConfig, ics, keep=None) -> list[PathRecord]:
    # keep=(t0, t1) records only that span; the slow phase then starts on the
    # 2*pi branch nearest the initial phase
    nu0 = system.resonance.nu0
    cfg.validate(system.envelope, nu0)
    model = _make_model(system, cfg)
    stride = cfg.stride(nu0)
    n_rec = cfg.n_steps(nu0) // stride + 1
    lo, hi = (0, n_rec) if keep is None else _slot_range(keep, model.t0, stride * model.dt, n_rec)
    col = _Collector(cfg.n_paths, lo, hi)
    final, status = drive(model, ics, cfg, col)
    times = model.t0 + np.arange(lo, hi) * stride * model.dt
    t_last = model.t0 + cfg.n_steps(nu0) * model.dt
    if cfg.n_steps(nu0) % stride and hi == n_rec:
        # the last step is off the stride; append it so records reach t_end
        times = np.append(times, t_last)
        tail = [np.where(status == 0, f, np.nan)[:, None] for f in final]
        col.a, col.b = np.hstack([col.a, tail[0]]), np.hstack([col.b, tail[1]])
    out = []
    for i in range(cfg.n_paths):
        psi0 = ics[i % len(ics)][1]
        a, b = col.a[i], col.b[i]
        rho, psi = model.derive(times, a, b, psi0)
        rec = PathRecord(times, np.stack([a, b], axis=1), rho, psi,
                         STATUS_NAMES[int(status[i])], cfg.frame, i)
        r_end, _ = model.derive(np.array([t_last]), final[0][i:i + 1], final[1][i:i + 1], psi0)
        rec.final_rho = float(r_end[0])
        out.append(rec)
    return out


def _slot_range(keep, t0, slot_dt, n_rec):
    lo = max(0, int(math.floor((keep[0] - t0) / slot_dt + 1e-9)))
    hi = min(n_rec, int(math.ceil((keep[1] - t0) / slot_dt - 1e-9)) + 1)
    return lo, max(hi, lo + 1)


def simulate_cartesian(cs: CartesianSpec, cfg: SimConfig, ics) -> list[PathRecord]:
    """Euler-Maruyama with an exact rotation for the harmonic core.

    ``ics`` are ``(rho, psi)`` pairs at ``t_start``; path ``i`` uses ``ics[i % len(ics)]``.
    """
    if cfg.frame != "cartesian":
        raise SimulationError("simulate_cartesian needs frame='cartesian'")
    return _simulate_sde(cs, cfg, ics)


def simulate_polar(spec: SystemSpec, cfg: SimConfig, ics) -> list[PathRecord]:
    """Euler-Maruyama in (rho, phi) with absorption at ``r_min``."""
    if cfg.frame != "polar":
        raise SimulationError("simulate_polar needs frame='polar'")
    for r, _ in ics:
        if not (cfg.r_min < r < spec.R_max):
            raise SimulationError(f"initial rho = {r} is outside (r_min, R_max)")
    return _simulate_sde(spec, cfg, ics)


# ---------------------------------------------------------------- averaged frames
def averaged_table(entries):
    """Term arrays for the RK4 kernel from ``(slot, mu_power, TrigPoly)`` triples."""
    rows = []
    for slot, k, P in entries:
        if P.has_S():
            raise SimulationError("averaged right-hand sides must not depend on S")
        for (rp, kind, j, _), c in P.items():
            rows.append((slot, rp, float(j), float(k), c, kind == SIN))
    if not rows:
        rows.append((0, 0, 0.0, 0.0, 0.0, False))
    cols = list(zip(*rows))
    return (np.array(cols[0], dtype=np.int64), np.array(cols[1], dtype=np.int64),
            np.array(cols[2]), np.array(cols[3]), np.array(cols[4]),
            np.array(cols[5], dtype=np.bool_))


def truncated_entries(avg, frame: str, second=None):
    """Right-hand side of the truncated (all orders), limiting (leading orders) or
    second-stage truncated system (psi-averaged amplitude equation)."""
    if frame == "truncated":
        return ([(0, k, P) for k, P in avg.Lambda.items()]
                + [(1, k, P) for k, P in avg.Omega.items()])
    if frame == "limiting":
        if avg.q is None:
            raise SimulationError("limiting system needs a resonant order q")
        return [(0, avg.n, avg.Lambda_at(avg.n)), (1, avg.q, avg.Omega_at(avg.q))]
    if frame == "truncated2":
        if second is None:
            raise SimulationError("truncated2 needs the second averaging")
        return ([(0, k, P) for k, P in second.F.items()]
                + [(1, k, P) for k, P in avg.Omega.items()])
    raise SimulationError(f"frame {frame!r} is not an averaged frame")


def simulate_truncated(avg, env: Envelope, phase: Phase, cfg: SimConfig, ics, second=None,
                       R_max: float = 5.0) -> list[PathRecord]:
    """RK4 on the averaged system in slow variables ``(rho, psi)``; one record per IC."""
    cfg.validate(env, 1.0, strict_dt=False)
    table = averaged_table(truncated_entries(avg, cfg.frame, second))
    family = 0 if env.family == "power" else 1
    n_steps, stride, dt = cfg.n_steps(), cfg.stride(), cfg.step()
    times = cfg.t_start + np.arange(n_steps // stride + 1) * stride * dt
    out = []
    for i, ic in enumerate(ics):
        rec, st, _, _ = kernels.rk4_run(np.array(ic, float), cfg.t_start, dt, n_steps, family,
                                        env.alpha, table, cfg.rk_tol, cfg.r_min, R_max, stride)
        out.append(PathRecord(times, rec, rec[:, 0].copy(), rec[:, 1].copy(), STATUS_NAMES[st],
                              cfg.frame, i))
    return out


def simulate(system, cfg: SimConfig, ics, avg=None, second=None, keep=None) -> list[PathRecord]:
    if cfg.frame in ("cartesian", "polar"):
        if cfg.frame == "polar":
            for r, _ in ics:
                if not (cfg.r_min < r < system.R_max):
                    raise SimulationError(f"initial rho = {r} is outside (r_min, R_max)")
        return _simulate_sde(system, cfg, ics, keep)
    if avg is None:
        raise SimulationError(f"frame {cfg.frame!r} needs an averaged system")
    return simulate_truncated(avg, system.envelope, system.phase, cfg, ics, second, system.R_max)
