import math

import numpy as np
import pytest
from scipy import integrate, stats

from isores.analysis import analyze_locking, particular_solution
from isores.averaging import average_first, average_second
from isores.sde import kernels
from isores.sde.ensemble import (DriftTarget, LockingTarget, ensemble, proportion_ci,
                                 terminal_fraction)
from isores.sde.metrics import WindowError, metric_MD, metric_ML
from isores.sde.rng import NormalStreams, path_generator, path_seed, splitmix64
from isores.sde.simulate import (PathRecord, SimConfig, SimulationError, _PolarModel, simulate,
                                 simulate_cartesian, simulate_polar, simulate_truncated)
from isores.sysdef import Envelope, Phase, load_spec, presets
from isores.trigpoly import TrigPoly

ENV4 = Envelope("power", 0.25)


def polar_spec(drift, noise, eps=0.0, n=2, p=1, alpha=0.25):
    return load_spec({"resonance": {"kappa": 1, "varkappa": 1, "nu0": 1.0},
                      "envelope": {"family": "power", "alpha": alpha, "t0": 1.0},
                      "phase": {"s": [1.0]}, "n": n, "p": p, "eps": eps,
                      "drift": drift, "noise": noise})


class FlowOnly:
    q = None

    def __init__(self, Lam, Om):
        self.Lambda, self.Omega = Lam, Om


# ---------------------------------------------------------------- rng
def test_splitmix_reference_values():
    # first outputs of the reference splitmix64 generator seeded with 0
    assert splitmix64(0) == 0xE220A8397B1DCDAF
    assert path_seed(7, 0) != path_seed(7, 1) != path_seed(8, 0)


def test_chunked_draws_match_single_draw():
    a = NormalStreams(11, [0, 1, 5], 2)
    chunks = np.concatenate([a.draw(3), a.draw(5), a.draw(1)], axis=1)
    whole = NormalStreams(11, [0, 1, 5], 2).draw(9)
    assert np.array_equal(chunks, whole)
    one = path_generator(11, 5).standard_normal((9, 2))
    assert np.array_equal(whole[2], one)


# ---------------------------------------------------------------- trivial flows
def test_polar_zero_coefficients_rotate_exactly():
    spec = polar_spec({}, {})
    cfg = SimConfig(1.0, 50.0, frame="polar", n_paths=2)
    for path in simulate_polar(spec, cfg, [(1.3, 0.2)]):
        t, r, psi = path.valid()
        assert np.all(r == 1.3)
        phi = path.states[:, 1] + (t - t[0])
        # phi(t0) = psi0 + S(t0) with S(t) = t
        assert np.allclose(phi, 0.2 + t, atol=1e-12)
        assert np.allclose(psi, 0.2, atol=1e-12)
        assert path.status == "completed"


@pytest.mark.skipif(not kernels.USE_NUMBA, reason="6e7 steps is too slow for the numpy stepper")
def test_cartesian_unperturbed_energy():
    cs = load_spec({"frame": "cartesian", "resonance": {"kappa": 1, "varkappa": 1},
                    "envelope": {"alpha": 0.25}, "phase": {"s": [1.0]}, "n": 2, "p": 1,
                    "eps": 0.0, "f": "0", "g": "0"})
    T = 1e4 * 2 * math.pi
    cfg = SimConfig(1.0, 1.0 + T, dt=1e-3, record_stride=100_000)
    path, = simulate_cartesian(cs, cfg, [(1.0, 0.0)])
    assert path.status == "completed"
    assert abs(path.final_rho - 1.0) < 1e-3
    assert np.nanmax(np.abs(path.rho - 1.0)) < 1e-3


def test_truncated_linear_closed_form():
    flow = FlowOnly({2: TrigPoly.r(1).scale(-0.1)}, {})
    cfg = SimConfig(1.0, 200.0, dt=0.05, frame="truncated")
    path, = simulate_truncated(flow, ENV4, Phase((1.0,)), cfg, [(1.5, 0.3)])
    assert path.status == "completed"
    want = 1.5 * np.exp(-0.1 * np.array([ENV4.gamma(2, t, 1.0) for t in path.times]))
    assert np.max(np.abs(path.rho - want)) <= 1e-8
    assert np.all(path.psi == 0.3)


def test_truncated_statuses():
    grow = FlowOnly({2: TrigPoly.r(1)}, {})
    cfg = SimConfig(1.0, 400.0, dt=0.05, frame="truncated")
    assert simulate_truncated(grow, ENV4, Phase((1.0,)), cfg, [(1.0, 0.0)])[0].status == "exited_Rmax"
    decay = FlowOnly({2: TrigPoly.r(1).scale(-1.0)}, {})
    cfg = SimConfig(1.0, 400.0, dt=0.05, frame="truncated", r_min=0.5)
    assert simulate_truncated(decay, ENV4, Phase((1.0,)), cfg, [(1.0, 0.0)])[0].status == "absorbed_at_rmin"
    with pytest.raises(SimulationError):
        simulate_truncated(decay, ENV4, Phase((1.0,)), SimConfig(1, 2, frame="limiting"), [(1, 0)])


# ---------------------------------------------------------------- deterministic oracles
def _cartesian_rhs(cs):
    ft = cs.f_terms()
    env, phase, n = cs.envelope, cs.phase, cs.n

    def rhs(t, y):
        x1, x2 = y
        S = phase.value(env, t)
        f = sum(c * x1 ** a * x2 ** b * (math.sin(w * S) if s else math.cos(w * S))
                for c, a, b, s, w in ft)
        return [x2, -x1 + env.mu(t) ** n * f]

    return rhs


def test_cartesian_deterministic_matches_ode_solver():
    cs = presets.resolve("fig-ex1", eps=0.0)
    t0, t1 = 50.0, 1000.0
    cfg = SimConfig(t0, t1)
    path, = simulate_cartesian(cs, cfg, [(1.0, 0.3)])
    ph = 0.3 + cs.resonance.ratio * cs.phase.value(cs.envelope, t0)
    ref = integrate.solve_ivp(_cartesian_rhs(cs), (t0, t1), [math.cos(ph), -math.sin(ph)],
                              method="DOP853", rtol=1e-11, atol=1e-12, t_eval=path.times)
    err = np.max(np.abs(np.hypot(*ref.y) - path.rho))
    assert err <= 5 * cfg.step()


def test_polar_deterministic_matches_ode_solver():
    sp = presets.resolve_polar("fig-ex1", eps=0.0)
    t0, t1 = 50.0, 1000.0
    cfg = SimConfig(t0, t1, frame="polar")
    path, = simulate_polar(sp, cfg, [(1.0, 0.3)])
    env, phase = sp.envelope, sp.phase

    def rhs(t, y):
        S = phase.value(env, t)
        m = env.mu(t)
        dr = sum(m ** k * a.eval(y[0], y[1], S) for k, (a, _) in sp.drift.items())
        dp = sp.resonance.nu0 + sum(m ** k * b.eval(y[0], y[1], S) for k, (_, b) in sp.drift.items())
        return [dr, dp]

    phi0 = 0.3 + sp.resonance.ratio * phase.value(env, t0)
    ref = integrate.solve_ivp(rhs, (t0, t1), [1.0, phi0], method="DOP853", rtol=1e-11,
                              atol=1e-12, t_eval=path.times)
    assert np.max(np.abs(ref.y[0] - path.rho)) <= 5 * cfg.step()


# ---------------------------------------------------------------- stochastic properties
def test_frames_agree_in_distribution():
    t0, t1 = 50.0, 300.0
    cs = presets.resolve("fig-ex1")
    sp = presets.resolve_polar("fig-ex1")
    a = simulate_cartesian(cs, SimConfig(t0, t1, seed=3, n_paths=200), [(1.0, 0.0)])
    b = simulate_polar(sp, SimConfig(t0, t1, seed=4, n_paths=200, frame="polar"), [(1.0, 0.0)])
    ra = [p.final_rho for p in a]
    rb = [p.final_rho for p in b]
    assert np.std(ra) > 0.01
    assert stats.ks_2samp(ra, rb).pvalue > 0.01


def _linear_terminal(spec, t0, t1, normals):
    """Euler-Maruyama terminal values of the polar model fed with given increments."""
    n = normals.shape[1]
    cfg = SimConfig(t0, t1, dt=(t1 - t0) / n, frame="polar", n_paths=normals.shape[0],
                    record_stride=n)
    model = _PolarModel(spec, cfg)
    assert cfg.n_steps() == n
    state = model.init_state([(1.0, 0.0)] * normals.shape[0])
    status = np.zeros(normals.shape[0], dtype=np.int64)
    rec = (np.empty((normals.shape[0], 1)), np.empty((normals.shape[0], 1)))
    model.step(state, model.tables(0, n), normals, status, 0, rec, 1, n)
    return state[0]


def test_strong_order():
    # eps small enough that no path reaches r_min, where absorption would freeze it
    spec = polar_spec({"2": ["-r", "0"]}, {"1": [["r", "0"], ["0", "0"]]}, eps=0.5)
    t0, t1, n_coarse, paths = 1.0, 3.0, 32, 4000
    fine = np.random.default_rng(0).standard_normal((paths, 64 * n_coarse, 2))

    def coarsen(m):
        return fine.reshape(paths, -1, m, 2).sum(axis=2) / math.sqrt(m)

    ref = _linear_terminal(spec, t0, t1, fine)
    e1 = np.mean(np.abs(_linear_terminal(spec, t0, t1, coarsen(64)) - ref))
    e2 = np.mean(np.abs(_linear_terminal(spec, t0, t1, coarsen(32)) - ref))
    assert e1 / e2 >= 1.3


def test_determinism_across_workers_and_runs():
    cs = presets.resolve("fig-ex1")
    runs = [simulate_cartesian(cs, SimConfig(50.0, 200.0, seed=9, n_paths=40, workers=w),
                               [(1.0, 0.0), (1.5, 1.0)]) for w in (1, 3, 1)]
    for other in runs[1:]:
        for a, b in zip(runs[0], other):
            assert np.array_equal(a.states, b.states, equal_nan=True)
            assert a.status == b.status


@pytest.mark.skipif(not kernels.HAVE_NUMBA, reason="numba not installed")
@pytest.mark.parametrize("frame", ["cartesian", "polar"])
def test_numba_and_numpy_kernels_agree(frame, monkeypatch):
    sys_ = presets.resolve("fig-ex1") if frame == "cartesian" else presets.resolve_polar("fig-ex1")
    cfg = SimConfig(50.0, 150.0, seed=2, n_paths=20, frame=frame)
    fast = simulate(sys_, cfg, [(1.0, 0.0)])
    monkeypatch.setattr(kernels, "USE_NUMBA", False)
    slow = simulate(sys_, cfg, [(1.0, 0.0)])
    for a, b in zip(fast, slow):
        assert np.allclose(a.states, b.states, rtol=1e-10, atol=1e-10, equal_nan=True)


@pytest.mark.skipif(not kernels.HAVE_NUMBA, reason="numba not installed")
def test_numba_and_numpy_rk4_agree(monkeypatch):
    sp = presets.resolve_polar("fig-ex1")
    avg = average_first(sp, 3)
    cfg = SimConfig(50.0, 500.0, dt=0.1, frame="truncated")
    fast = simulate_truncated(avg, sp.envelope, sp.phase, cfg, [(1.0, 0.3)])[0]
    monkeypatch.setattr(kernels, "USE_NUMBA", False)
    slow = simulate_truncated(avg, sp.envelope, sp.phase, cfg, [(1.0, 0.3)])[0]
    assert np.allclose(fast.states, slow.states, rtol=1e-12, atol=1e-12)


def test_psi_unwrapped():
    cs = presets.resolve("fig-ex1")
    for path in simulate_cartesian(cs, SimConfig(50.0, 600.0, seed=1, n_paths=8), [(1.0, 0.0)]):
        _, _, psi = path.valid()
        assert np.max(np.abs(np.diff(psi))) < math.pi


def test_truncated2_drift():
    sp = presets.resolve_polar("fig-ex11")
    avg = average_first(sp, 2)
    sec = average_second(avg)
    cfg = SimConfig(50.0, 1e4, dt=0.5, frame="truncated2")
    path, = simulate_truncated(avg, sp.envelope, sp.phase, cfg, [(1.0, 0.0)], second=sec)
    rho0 = math.sqrt(8 / 3 + 0.5 ** 2 / 2)
    assert abs(path.rho[-1] - rho0) < 0.05
    assert np.all(np.diff(path.psi) < 0)
    # leading term of the phase: -(kappa/varkappa) s_q gamma_q(t), q = 1
    lead = -0.5 * 8.0 * sp.envelope.gamma(1, path.times[-1])
    assert path.psi[-1] / lead == pytest.approx(1.0, abs=0.05)


# ---------------------------------------------------------------- metrics
@pytest.fixture(scope="module")
def locked():
    sp = presets.resolve_polar("fig-ex1")
    avg = average_first(sp, 2)
    rep = next(r for r in analyze_locking(avg, sp.envelope) if r.verdict == "locking_stable")
    return sp, rep, particular_solution(rep, avg, sp.envelope)


def _record(times, rho, psi, status="completed"):
    return PathRecord(times, np.stack([rho, psi], axis=1), rho, psi, status, "polar")


def test_metric_ml_trivial_cases(locked):
    sp, rep, sol = locked
    t = np.linspace(100.0, 200.0, 101)
    on = _record(t, sol.rho(t) + 0 * t, sol.phi(t) + 0 * t + 2 * math.pi)
    assert metric_ML(on, sol, sp.envelope, 2, 2, (100.0, 200.0), math.pi) == 0.0
    off = _record(t, sol.rho(t) + 0.07 + 0 * t, sol.phi(t) + 0 * t)
    assert metric_ML(off, sol, sp.envelope, 2, 2, (100.0, 200.0)) == pytest.approx(0.07)
    rng = np.random.default_rng(1)
    dr, dp = rng.uniform(-0.1, 0.1, t.size), rng.uniform(-0.1, 0.1, t.size)
    both = _record(t, sol.rho(t) + dr, sol.phi(t) + dp)
    want = np.max(np.hypot(dr, dp)[(t >= 120) & (t <= 180)])
    assert metric_ML(both, sol, sp.envelope, 2, 2, (120.0, 180.0)) == pytest.approx(want, rel=1e-12)
    # n > q weights the phase error by mu^(n - q)
    w = metric_ML(_record(t, sol.rho(t) + 0 * t, sol.phi(t) + 0.1), sol, sp.envelope, 3, 2,
                  (100.0, 100.0))
    assert w == pytest.approx(0.1 * math.sqrt(sp.envelope.mu(100.0)))


def test_metric_md_and_window_errors(locked):
    sp, rep, sol = locked

    class Drift:
        rho0 = 1.5

    t = np.linspace(10.0, 20.0, 11)
    assert metric_MD(_record(t, 1.5 + 0 * t, t), Drift, (10.0, 20.0)) == 0.0
    assert metric_MD(_record(t, 1.45 + 0 * t, t), Drift, (10.0, 20.0)) == pytest.approx(0.05)
    with pytest.raises(WindowError):
        metric_MD(_record(t, 1.5 + 0 * t, t), Drift, (5.0, 20.0))
    with pytest.raises(WindowError):
        metric_ML(_record(t, 1.5 + 0 * t, t), sol, sp.envelope, 2, 2, (10.0, 25.0))
    exited = _record(t, np.r_[np.full(5, 1.5), np.full(6, np.nan)], t, "exited_Rmax")
    assert metric_MD(exited, Drift, (10.0, 20.0)) == math.inf


# ---------------------------------------------------------------- ensembles
def test_proportion_ci():
    p, hw = proportion_ci(20, 100)
    assert p == 0.2 and hw == pytest.approx(1.959963984540054 * 0.04)
    assert proportion_ci(80, 400)[1] == pytest.approx(hw / 2)
    assert proportion_ci(0, 50) == (0.0, 0.0)


def test_ensemble_ci_scaling(locked):
    sp, rep, sol = locked
    cs = presets.resolve("fig-ex1")
    target = LockingTarget(sol, 2, 1, 2, math.pi)
    ics = presets.ic_ring(rep.rho0, rep.phi0, 0.1, 8)
    out = {}
    for n in (100, 400):
        cfg = SimConfig(50.0, 400.0, seed=20240601, n_paths=n)
        out[n] = ensemble(cs, cfg, ics, target, eps1=0.43, window=(50.0, 400.0))
        assert out[n].p_hat == out[n].n_exceed / n
    assert 0.1 < out[400].p_hat < 0.9
    ratio = out[400].ci95_halfwidth / out[100].ci95_halfwidth
    assert abs(ratio - 0.5) <= 0.3 * 0.5


def test_ensemble_without_noise(locked):
    sp, rep, sol = locked
    cs = presets.resolve("fig-ex1", eps=0.0)
    cfg = SimConfig(50.0, 400.0, seed=1, n_paths=30)
    target = LockingTarget(sol, 2, 1, 2, math.pi)
    st = ensemble(cs, cfg, [(rep.rho0, rep.phi0)], target, eps1=10.0)
    assert st.p_hat == 0.0 and st.n_total == 30 and st.window == (50.0, 400.0)
    assert len(set(st.sups)) == 1
    st2 = ensemble(cs, cfg, [(rep.rho0, rep.phi0)], target, eps1=st.sups[0] + 1e-6)
    assert st2.p_hat == 0.0
    # the path keeps O(mu) oscillations around the locked amplitude
    assert terminal_fraction(st, rep.rho0, 0.15) == 1.0
    assert terminal_fraction(st, rep.rho0, 1e-3) == 0.0


def test_ensemble_drift_target():
    cs = presets.resolve("fig-ex11")

    class Drift:
        rho0 = math.sqrt(8 / 3 + 0.5 ** 2 / 2)

    cfg = SimConfig(50.0, 200.0, seed=5, n_paths=10)
    st = ensemble(cs, cfg, [(Drift.rho0, 0.0)], DriftTarget(Drift, 2, 1, 1), eps1=5.0)
    assert st.metric == "M_D" and st.p_hat == 0.0
    assert st.window == (50.0, min(50.0 + st.horizon, 200.0))
    assert st.horizon_capped == (50.0 + st.horizon > 200.0)
