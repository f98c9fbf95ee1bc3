"""End-to-end acceptance checks, one or more tests per numbered criterion.

Run with ``pytest tests/test_acceptance.py`` (or ``python3 tests/test_acceptance.py``);
the terminal summary prints one PASS/FAIL line per criterion.
"""

import math
import sys
import time

import numpy as np
import pytest
from hypothesis import given, settings

from isores import analysis as A
from isores.averaging import average_first, average_second
from isores.sde import SimConfig, simulate_truncated
from isores.sde.ensemble import LockingTarget, ensemble
from isores.sde.simulate import worker_count
from isores.sysdef import Envelope, cartesian_to_polar, horizon_T_eps, presets
from isores.trigpoly import TrigPoly

sys.path.insert(0, __file__.rsplit("/", 1)[0])
from test_trigpoly import _scale, polys  # noqa: E402

SEED = 20240601


def polar(name, **kw):
    return cartesian_to_polar(presets.resolve(name, **kw))


class Timer:
    def __init__(self, limit):
        self.limit = limit

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0
        print(f"runtime {self.elapsed:.2f} s (budget {self.limit} s)")


def wrap(x, period):
    return (x + period / 2) % period - period / 2


# ---------------------------------------------------------------- 1
def test_criterion_01_ex0_averaging_exact():
    A1, B0, B1, C0, eps, s1 = 0.3, -1.0, 2.5, -0.2, 0.4, 0.7
    with Timer(1):
        avg = average_first(polar("ex0", A1=A1, B0=B0, B1=B1, C0=C0, eps=eps, s1=s1), 2)
    Q1 = B1 - A1
    d = 2
    r, one = TrigPoly.r, TrigPoly.const(1.0, d)
    s2, c2, c4 = TrigPoly.sin(2, 0, d), TrigPoly.cos(2, 0, d), TrigPoly.cos(4, 0, d)
    lam2 = (r(1, d) * (one.scale(32 * B0) + r(2, d).scale(24 * C0) + s2.scale(16 * Q1)
                       + (one.scale(6) - c4).scale(eps ** 2))).scale(1 / 64)
    om2 = (c2 * (one.scale(4 * Q1) + s2.scale(eps ** 2))).scale(1 / 16)
    om1 = TrigPoly.const(-s1 / 2, d)
    for got, want in ((avg.Lambda_at(2), lam2), (avg.Omega_at(1), om1), (avg.Omega_at(2), om2)):
        assert set(got.terms) == set(want.terms)
        assert got.allclose(want, 1e-12)
    assert avg.Lambda_at(1).is_zero()


# ---------------------------------------------------------------- 2
def test_criterion_02_ex2_averaging_exact():
    rng = np.random.default_rng(SEED)
    with Timer(1) as tm:
        worst = 0.0
        for _ in range(100):
            r, psi = rng.uniform(0.1, 3.0), rng.uniform(-math.pi, math.pi)
            B0, B1, eps = rng.uniform(-2, 1), rng.uniform(-3, 3), rng.uniform(0, 1)
            avg = average_first(polar("ex2", B0=B0, B1=B1, C0=-1.0, eps=eps), 2)
            Q1 = math.sqrt(16 * B1 ** 2 + eps ** 4)
            th = math.asin(4 * B1 / Q1)
            lam = r / 32 * (16 * B0 - 4 * r ** 2 + 3 * eps ** 2 - 2 * Q1 * math.cos(2 * psi + th))
            om = Q1 / 16 * math.sin(2 * psi + th)
            worst = max(worst, abs(avg.Lambda_at(2).eval(r, psi) - lam),
                        abs(avg.Omega_at(2).eval(r, psi) - om))
    print(f"max deviation {worst:.3e}")
    assert worst <= 1e-10


# ---------------------------------------------------------------- 3
def test_criterion_03_fixed_points():
    with Timer(1):
        sp = polar("ex0", B0=-1.0, B1=2.5, A1=0.0, C0=-0.2, eps=0.4)
        ex0 = A.analyze_locking(average_first(sp, 2), sp.envelope)
        sp2 = polar("ex2", B0=-1.0, B1=2.5, C0=-1.0, eps=0.5)
        ex2 = A.analyze_locking(average_first(sp2, 2), sp2.envelope)
    plus = [r for r in ex0 if r.verdict == "locking_stable" and abs(r.rho0 - 1.378) <= 1e-3]
    assert plus
    stable2 = [r for r in ex2 if r.verdict == "locking_stable"]
    assert stable2
    for r in stable2:
        print(f"ex2 rho0={r.rho0:.6f} phi0={r.phi0 % math.pi:.6f}")
        assert abs(r.rho0 - 1.090) <= 1e-3 and abs(r.phi0 % math.pi - 0.79) <= 0.01


# ---------------------------------------------------------------- 4
def test_criterion_04_noise_shifted_boundary():
    eps = 0.4
    with Timer(120):
        assert A.partition_scan("ex0", [-0.03], [0.05], eps)[0][2]
        assert not A.partition_scan("ex0", [-0.03], [0.05], 0.0)[0][2]
        xs, ys = np.linspace(-0.5, 0.1, 81), np.linspace(-1, 1, 81)
        rows = A.partition_scan("ex0", xs, ys, eps, workers=worker_count())
        bad = A.partition_mismatches("ex0", rows, xs, ys, eps)
    print(f"{len(rows)} cells, {len(bad)} mismatches away from the closed-form boundary")
    assert len(rows) == 81 * 81 and bad == []


# ---------------------------------------------------------------- 5
def test_criterion_05_limiting_system_converges():
    sp = polar("fig-ex1")
    avg = average_first(sp, 2)
    reps = [r for r in A.analyze_locking(avg, sp.envelope) if r.verdict == "locking_stable"]
    t0, T = 50.0, 3000.0
    assert sp.envelope.gamma(avg.q, T, t0) >= 20
    ics = presets.ic_lattice()
    with Timer(30):
        paths = simulate_truncated(avg, sp.envelope, sp.phase,
                                   SimConfig(t0, T, dt=0.25, frame="limiting"), ics)
    worst = 0.0
    for path in paths:
        assert path.status == "completed"
        d = min(math.hypot(path.rho[-1] - r.rho0, wrap(path.psi[-1] - r.phi0, r.period))
                for r in reps)
        worst = max(worst, d)
    print(f"largest final distance {worst:.3e} over {len(paths)} initial conditions")
    assert worst < 1e-3


# ---------------------------------------------------------------- 6
@pytest.mark.parametrize("name, formula", [
    ("fig-ex11", lambda e: math.sqrt(8 / 3 + e * e / 2)),
    ("fig-ex22", lambda e: math.sqrt(2 + 3 * e * e / 4)),
], ids=["ex11", "ex22"])
@pytest.mark.parametrize("eps", [0.0, 0.5], ids=["eps0", "eps0.5"])
def test_criterion_06_drift_radii(name, formula, eps):
    with Timer(60):
        sp = polar(name, eps=eps)
        avg = average_first(sp, 2)
        sec = average_second(avg)
        rep, = A.classify_drift(avg, sp.envelope, sec)
        rho0 = formula(eps)
        paths = simulate_truncated(avg, sp.envelope, sp.phase,
                                   SimConfig(50.0, 1e4, dt=0.5, frame="truncated2"),
                                   presets.ic_lattice(), second=sec)
    assert abs(rep.rho0 - rho0) <= 1e-9
    worst = max(abs(p.rho[-1] - rho0) for p in paths)
    print(f"{name} eps={eps}: rho0={rep.rho0:.12f}, worst final offset {worst:.3e}")
    assert worst < 0.05


# ---------------------------------------------------------------- 7
@pytest.fixture(scope="module")
def stochastic_runs():
    sp = polar("fig-ex1")
    avg = average_first(sp, 2)
    rep = min((r for r in A.analyze_locking(avg, sp.envelope) if r.verdict == "locking_stable"),
              key=lambda r: r.phi0 % r.period)
    sol = A.particular_solution(rep, avg, sp.envelope)
    target = LockingTarget(sol, avg.n, avg.p, avg.q, rep.period)
    ics = presets.ic_ring(rep.rho0, rep.phi0, 0.1, 8)
    out = {}
    with Timer(600):
        for eps in (0.4, 0.2):
            cs = presets.resolve("fig-ex1", eps=eps)
            cfg = SimConfig(50.0, 3000.0, dt=2.5e-3 * math.pi, seed=SEED, n_paths=200,
                            workers=worker_count())
            out[eps] = ensemble(cs, cfg, ics, target, eps1=0.5)
    return out


def test_criterion_07a_terminal_amplitude(stochastic_runs):
    st = stochastic_runs[0.4]
    final = np.array([r for r, s in zip(st.terminal_rho, st.statuses) if s != "absorbed_at_rmin"])
    share = float(np.mean(np.abs(final - 1.378) < 0.15))
    print(f"{share:.1%} of {final.size} non-absorbed paths end within 0.15 of 1.378")
    assert share >= 0.8


def test_criterion_07b_exceedance(stochastic_runs):
    st = stochastic_runs[0.4]
    print(f"p_hat = {st.p_hat:.3f} +- {st.ci95_halfwidth:.3f} over window {st.window}")
    assert st.p_hat <= 0.2


def test_criterion_07c_noise_monotone(stochastic_runs):
    lo, hi = stochastic_runs[0.2], stochastic_runs[0.4]
    bound = hi.p_hat + 2 * (lo.ci95_halfwidth + hi.ci95_halfwidth)
    print(f"p_hat(0.2) = {lo.p_hat:.3f}, p_hat(0.4) = {hi.p_hat:.3f}, bound {bound:.3f}")
    assert lo.p_hat <= bound


# ---------------------------------------------------------------- 8
def test_criterion_08_lyapunov():
    with Timer(10):
        sp = polar("fig-ex1")
        avg = average_first(sp, 2)
        reps = [r for r in A.analyze_locking(avg, sp.envelope) if r.verdict == "locking_stable"]
        checks = [A.lyapunov_check(r, avg, sp.envelope, annulus=(0.01, 0.2),
                                   t_grid=(1e2, 1e3, 1e4)) for r in reps]
    assert checks
    for c in checks:
        print(f"B1={c.B1:.4f} B2={c.B2:.4f} max dV/dt by t: {c.max_dVdt_by_t}")
        assert c.B1 > 0 and c.max_dVdt < 0


# ---------------------------------------------------------------- 9
@settings(max_examples=500, deadline=None, derandomize=True)
@given(polys())
def _trigpoly_invariants(p):
    zm = p - p.average_S()
    assert zm.antiderivative_S().diff("S").allclose(zm, 1e-12 * (1 + zm.max_abs_coeff()))
    rs = np.linspace(0.3, 2.0, 3)
    psis = np.linspace(0, 2 * math.pi, 4, endpoint=False)
    S = np.arange(4096) * (2 * math.pi * p.denom / 4096)
    R, P, SS = np.meshgrid(rs, psis, S, indexing="ij")
    quad = p.eval(R, P, SS).mean(axis=-1)
    exact = p.average_S().eval(R[..., 0], P[..., 0])
    assert np.all(np.abs(quad - exact) <= 1e-10 * (1.0 + np.abs(exact) + _scale(p, r=0.3)))
    if p.denom == 1:
        for kap, vk in ((1, 2), (3, 2)):
            sub = p.substitute_phase(kap, vk)
            for r, psi, s in ((0.7, 0.4, 3.1), (1.9, -2.0, -11.0)):
                want = p.eval(r, kap / vk * s + psi, s)
                assert abs(sub.eval(r, psi, s) - want) <= 1e-12 * _scale(p, r=r)


def test_criterion_09_trigpoly_oracles():
    with Timer(30):
        _trigpoly_invariants()


# ---------------------------------------------------------------- 10
def test_criterion_10_horizon():
    with Timer(1):
        for alpha in (0.1, 0.25, 1 / 3, 0.5, 0.7):
            env = Envelope("power", alpha)
            for exponent in (1, 2, 3, 4, 5):
                T = horizon_T_eps(env, exponent, 50.0, 0.3, 0.5)
                assert math.isinf(T) == (exponent * alpha > 1), (alpha, exponent, T)
        env = Envelope("power", 0.25)
        for ts in (1.0, 50.0, 1e3):
            for eps in (0.5, 0.1, 1e-3):
                for l in (0.2, 0.5, 0.9):
                    T = horizon_T_eps(env, 2, ts, eps, l)
                    lhs = 2 * (math.sqrt(T + ts) - math.sqrt(ts))
                    rhs = eps ** (-2 * (1 - l))
                    assert abs(lhs - rhs) <= 1e-10 * max(1.0, rhs), (ts, eps, l)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
