"""Regime detection: fixed points of the limiting system, stability verdicts,
asymptotic particular solutions, phase-drift radii and Lyapunov checks."""

from __future__ import annotations

import cmath
import logging
import math
from dataclasses import asdict, dataclass, field
from functools import reduce

import numpy as np
from scipy import optimize

from .averaging import AveragedSystem, SecondAveraged, shift_expand
from .sysdef.envelope import Envelope
from .trigpoly import TrigPoly

log = logging.getLogger(__name__)

ROOT_TOL = 1e-12
ACCEPT_TOL = 1e-9
DEG_TOL = 1e-8
MARGIN = 1e-10


def _delta(a, b) -> int:
    return 1 if a == b else 0


def family_period(*polys: TrigPoly) -> float:
    """Smallest period in the angle shared by all polys (2*pi / gcd of angle frequencies)."""
    js = [k[2] for p in polys for k, _ in p.items() if k[2]]
    if not js:
        return 2 * math.pi
    return 2 * math.pi / reduce(math.gcd, js)


def _wrap(x: float, period: float) -> float:
    return x % period


# ---------------------------------------------------------------- fixed points
@dataclass
class FixedPointReport:
    rho0: float
    phi0: float
    residual: float
    period: float
    lambda_n: float = math.nan
    xi_n: float = math.nan
    eta_q: float = math.nan
    omega_q: float = math.nan
    D: float = math.nan
    beta1: complex = complex(math.nan)
    beta2: complex = complex(math.nan)
    beta2_tilde: complex = complex(math.nan)
    q_constraint_ok: bool = False
    p_constraint_ok: bool = False
    gamma_q_diverges: bool = True
    verdict: str = "unclassified"
    note: str = ""

    def to_json(self) -> dict:
        d = asdict(self)
        for k in ("beta1", "beta2", "beta2_tilde"):
            z = d[k]
            d[k] = {"re": z.real, "im": z.imag}
        return d


def _grad(P: TrigPoly):
    return P.diff("r"), P.diff("psi")


def find_fixed_points(Lambda_n: TrigPoly, Omega_q: TrigPoly, r_range=(0.05, 5.0),
                      deg_tol: float = DEG_TOL, grid: int = 64) -> list[FixedPointReport]:
    """All common zeros in ``[r_lo, r_hi] x [0, 2*pi)`` by sign-grid seeding and damped Newton."""
    if Lambda_n.has_S() or Omega_q.has_S():
        raise ValueError("fixed-point search needs S-free polynomials")
    r_lo, r_hi = r_range
    period = family_period(Lambda_n, Omega_q)
    rs = np.linspace(r_lo, r_hi, grid + 1)
    dpsi = 2 * math.pi / grid
    ps = (np.arange(grid + 1) + 0.5) * dpsi
    R, P = np.meshgrid(rs, ps, indexing="ij")
    L = Lambda_n.eval(R, P)
    O = Omega_q.eval(R, P)

    def changes(A):
        s = np.sign(A)
        c = np.stack([s[:-1, :-1], s[1:, :-1], s[:-1, 1:], s[1:, 1:]])
        return (c.max(axis=0) > 0) & (c.min(axis=0) < 0) | (c == 0).any(axis=0)

    cand = changes(L) & changes(O)
    Lr, Lp = _grad(Lambda_n)
    Or, Op = _grad(Omega_q)
    roots: list[tuple[float, float, float]] = []
    for i, j in zip(*np.nonzero(cand)):
        x0 = np.array([0.5 * (rs[i] + rs[i + 1]), 0.5 * (ps[j] + ps[j + 1])])
        res = _newton2(Lambda_n, Omega_q, (Lr, Lp, Or, Op), x0, r_lo, r_hi)
        if res is None:
            log.debug("seed (%g, %g) discarded: Newton did not converge", *x0)
            continue
        r0, p0, nrm = res
        p0 = _wrap(p0, 2 * math.pi)
        dup = False
        for (ra, pa, _) in roots:
            dp = abs(p0 - pa) % (2 * math.pi)
            dp = min(dp, 2 * math.pi - dp)
            if abs(r0 - ra) < 1e-6 and dp < 1e-6:
                dup = True
                break
        if not dup:
            roots.append((r0, p0, nrm))
    roots.sort(key=lambda x: (x[1], x[0]))
    return [FixedPointReport(rho0=r, phi0=p, residual=nrm, period=period) for r, p, nrm in roots]


def _newton2(L, O, grads, x0, r_lo, r_hi, maxit=60):
    Lr, Lp, Or, Op = grads
    x = x0.astype(float).copy()

    def F(x):
        return np.array([L.eval(x[0], x[1]), O.eval(x[0], x[1])])

    f = F(x)
    nf = np.max(np.abs(f))
    for _ in range(maxit):
        if nf <= ROOT_TOL:
            break
        J = np.array([[Lr.eval(x[0], x[1]), Lp.eval(x[0], x[1])],
                      [Or.eval(x[0], x[1]), Op.eval(x[0], x[1])]])
        try:
            step = np.linalg.solve(J, -f)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(step)):
            return None
        lam = 1.0
        while lam > 1e-6:
            xn = x + lam * step
            if xn[0] > 0:
                fn = F(xn)
                nn = np.max(np.abs(fn))
                if nn < nf:
                    break
            lam *= 0.5
        else:
            break
        x, f, nf = xn, fn, nn
    if nf > ACCEPT_TOL or not (r_lo <= x[0] <= r_hi):
        return None
    return x[0], x[1], nf


def classify_fixed_point(seed: FixedPointReport, avg: AveragedSystem, env: Envelope,
                         deg_tol: float = DEG_TOL, q: int | None = None) -> FixedPointReport:
    """Fill derivatives, beta parameters and the stability verdict."""
    n, N, p = avg.n, avg.N, avg.p
    q = avg.q if q is None else q
    if q is None:
        raise ValueError("no resonant order q")
    Ln, Oq = avg.Lambda_at(n), avg.Omega_at(q)
    r0, f0 = seed.rho0, seed.phi0
    lam = Ln.diff("r").eval(r0, f0)
    xi = Ln.diff("psi").eval(r0, f0)
    eta = Oq.diff("r").eval(r0, f0)
    om = Oq.diff("psi").eval(r0, f0)
    D = lam * om - xi * eta
    m, chi = env.params()
    rep = FixedPointReport(**{**asdict(seed)})
    rep.lambda_n, rep.xi_n, rep.eta_q, rep.omega_q, rep.D = lam, xi, eta, om, D
    rep.q_constraint_ok = n <= q < (2 * N + 2 + n) / 3
    rep.p_constraint_ok = p > (q - n) / 2
    rep.gamma_q_diverges = not (env.family == "power" and env.integrable(q))
    if q < n:
        rep.verdict = "inconclusive"
        rep.note = "q < n: the phase coefficient is constant, no isolated equilibrium"
        return rep
    if abs(D) <= deg_tol:
        rep.verdict = "degenerate"
        rep.note = "|D| below the degeneracy cutoff"
        return rep
    if q == n:
        tr = lam + om
        disc = cmath.sqrt(tr * tr - 4 * D)
        b1, b2 = 0.5 * (tr + disc), 0.5 * (tr - disc)
    else:
        if lam == 0:
            rep.verdict = "degenerate"
            rep.note = "lambda_n vanishes"
            return rep
        b1, b2 = complex(lam), complex(D / lam)
    b2t = b2 - _delta(m, q) * (q - n) * chi / 2
    rep.beta1, rep.beta2, rep.beta2_tilde = b1, b2, b2t
    if q == n:
        stable = b1.real < 0 and b2t.real < 0
        unstable = b1.real > 0 or b2t.real > 0
    else:
        stable = b1.real < 0 and b2t.real < 0
        unstable = b1.real > 0 and b2t.real > 0
    if stable:
        if rep.q_constraint_ok:
            rep.verdict = "locking_stable"
            if not rep.gamma_q_diverges:
                rep.note = "gamma_q bounded: stability without asymptotic convergence"
        else:
            rep.verdict = "inconclusive"
            rep.note = "limiting equilibrium is stable but q violates n <= q < (2N+2+n)/3"
    elif unstable:
        rep.verdict = "unstable"
    else:
        rep.verdict = "inconclusive"
        rep.note = "beta signs are mixed or zero; no stability conclusion"
    return rep


def analyze_locking(avg: AveragedSystem, env: Envelope, r_range=(0.05, 5.0),
                    deg_tol: float = DEG_TOL) -> list[FixedPointReport]:
    if avg.q is None:
        return []
    seeds = find_fixed_points(avg.Lambda_at(avg.n), avg.Omega_at(avg.q), r_range, deg_tol)
    return [classify_fixed_point(s, avg, env, deg_tol) for s in seeds]


# ---------------------------------------------------------------- particular solution
@dataclass
class ParticularSolution:
    rho_coeffs: list
    phi_coeffs: list
    env: Envelope
    residuals: list = field(default_factory=list)

    def _series(self, coeffs, t, deriv=False):
        scalar = np.isscalar(t)
        m = self.env.mu_array(t)
        if deriv:
            l = self.env.ell_array(t)
            out = sum(k * c * m ** k * l for k, c in enumerate(coeffs))
        else:
            out = sum(c * m ** k for k, c in enumerate(coeffs))
        out = np.broadcast_to(np.asarray(out, float), np.shape(m))
        return float(out) if scalar else out.copy()

    def rho(self, t):
        return self._series(self.rho_coeffs, t)

    def phi(self, t):
        return self._series(self.phi_coeffs, t)

    def rho_dot(self, t):
        return self._series(self.rho_coeffs, t, True)

    def phi_dot(self, t):
        return self._series(self.phi_coeffs, t, True)

    def to_json(self) -> dict:
        return {"rho_coeffs": list(self.rho_coeffs), "phi_coeffs": list(self.phi_coeffs),
                "residuals": list(self.residuals)}


def _shifted_coeff(P: TrigPoly, rho: list, phi: list, order: int, at) -> float:
    """Coefficient of mu^order in P(rho0 + sum rho_j mu^j, phi0 + ...) at the fixed point."""
    if order == 0:
        return P.eval(*at)
    d = P.denom
    dR = {j: TrigPoly.const(c, d) for j, c in enumerate(rho) if j >= 1 and c != 0.0}
    dP = {j: TrigPoly.const(c, d) for j, c in enumerate(phi) if j >= 1 and c != 0.0}
    sh = shift_expand(P, dR, dP, order)
    return sh[order].eval(*at) if order in sh else 0.0


def particular_solution(report: FixedPointReport, avg: AveragedSystem, env: Envelope,
                        N: int | None = None) -> ParticularSolution:
    """Coefficients of ``rho*(t) = rho0 + sum rho_k mu^k`` and ``phi*`` for ``k <= N - q``."""
    N = avg.N if N is None else N
    n, q = avg.n, avg.q
    at = (report.rho0, report.phi0)
    Y = np.array([[report.lambda_n, report.xi_n], [report.eta_q, report.omega_q]])
    rho = [report.rho0]
    phi = [report.phi0]
    resid = []
    for k in range(1, N - q + 1):
        rho.append(0.0)
        phi.append(0.0)
        Fk = -sum(_shifted_coeff(avg.Lambda_at(i), rho, phi, n + k - i, at) for i in range(n, n + k + 1))
        Gk = -sum(_shifted_coeff(avg.Omega_at(i), rho, phi, q + k - i, at) for i in range(q, q + k + 1))
        sol = np.linalg.solve(Y, [Fk, Gk])
        rho[k], phi[k] = float(sol[0]), float(sol[1])
        resid.append(float(np.max(np.abs(Y @ sol - [Fk, Gk]))))
    return ParticularSolution(rho, phi, env, resid)


# ---------------------------------------------------------------- phase drift
@dataclass
class DriftReport:
    mode: str
    rho0: float
    xi: float
    threshold: float
    condition_ok: bool
    phi_rate: float  # phi ~ phi_rate * gamma_q(t)
    q: int
    phi_leading: str = ""
    residual: float = 0.0

    def to_json(self) -> dict:
        return asdict(self)


def _r_roots(f, fprime, lo, hi, samples=4000):
    xs = np.linspace(lo, hi, samples + 1)
    ys = np.array([f(x) for x in xs])
    out = []
    for i in range(samples):
        a, b = ys[i], ys[i + 1]
        if a == 0.0:
            out.append(xs[i])
        elif a * b < 0:
            r = optimize.brentq(f, xs[i], xs[i + 1], xtol=1e-15, rtol=1e-15, maxiter=200)
            # polish with Newton
            for _ in range(3):
                dp = fprime(r)
                if dp == 0:
                    break
                r -= f(r) / dp
            out.append(r)
    if ys[-1] == 0.0:
        out.append(xs[-1])
    return out


def classify_drift(avg: AveragedSystem, env: Envelope, second: SecondAveraged | None = None,
                   r_range=(0.05, 5.0), grid: int = 4096) -> list[DriftReport]:
    """Amplitude radii for the phase-drift regime with their stability condition."""
    m, chi = env.params()
    n, q = avg.n, avg.q
    if q is None:
        return []
    thr = _delta(m, n) * chi / 2 + 0.0
    rate = -avg.kappa * avg.s_at(q) / avg.varkappa
    lead = f"phi(t) ~ {rate!r} * gamma_{q}(t)"
    out = []
    if second is not None:
        Fn = second.F[n]
        dF = Fn.diff("r")
        f = lambda r: Fn.eval(r)
        fp = lambda r: dF.eval(r)
        for r0 in _r_roots(f, fp, *r_range):
            xi = fp(r0)
            if xi == 0:
                continue
            out.append(DriftReport("lemma5", r0, xi, thr, xi < thr - MARGIN, rate, q, lead,
                                   abs(f(r0))))
        return out
    # ψ-independent vanishing of the amplitude coefficient
    Ln, Oq = avg.Lambda_at(n), avg.Omega_at(q)
    groups: dict = {}
    for (rp, kind, j, l), c in Ln.items():
        groups.setdefault((kind, j), []).append((rp, c))
    if not groups:
        return []

    def gpoly(terms):
        return lambda r: sum(c * r ** rp for rp, c in terms)

    first = next(iter(groups.values()))
    g0 = gpoly(first)
    g0p = lambda r: sum(c * rp * r ** (rp - 1) for rp, c in first)
    psis = np.linspace(0, 2 * math.pi, grid, endpoint=False)
    Xi = Ln.diff("r")
    for r0 in _r_roots(g0, g0p, *r_range):
        scale = max(1.0, max(abs(c) for terms in groups.values() for _, c in terms))
        if any(abs(gpoly(t)(r0)) > 1e-9 * scale for t in groups.values()):
            continue
        Ov = Oq.eval(np.full_like(psis, r0), psis)
        if np.min(np.abs(Ov)) <= 1e-12:
            continue
        xv = Xi.eval(np.full_like(psis, r0), psis)
        i = int(np.argmax(xv))
        res = optimize.minimize_scalar(lambda s: -Xi.eval(r0, s),
                                       bracket=(psis[i] - 2 * math.pi / grid, psis[i],
                                                psis[i] + 2 * math.pi / grid))
        sup = max(float(xv[i]), -float(res.fun))
        out.append(DriftReport("lemma3", r0, sup, thr, sup < thr - MARGIN, rate, q, lead, 0.0))
    return out


# ---------------------------------------------------------------- Lyapunov check
@dataclass
class LyapunovCheck:
    alpha: float
    B1: float
    B2: float
    max_dVdt: float
    max_dVdt_by_t: dict
    B1_positive: bool

    def to_json(self) -> dict:
        return asdict(self)


def lyapunov_coefficients(report: FixedPointReport, avg: AveragedSystem, env: Envelope,
                          alpha: float = 0.0):
    n, q = avg.n, avg.q
    m, chi = env.params()
    lam, xi, eta, om = report.lambda_n, report.xi_n, report.eta_q, report.omega_q
    if lam == 0:
        raise ValueError("lambda_n vanishes: no Lyapunov coefficients")
    dmq = _delta(m, q)
    if abs(xi) <= 1e-14:
        omega_t = om - dmq * chi * (alpha + (q - n) / 2)
        B1 = lam * omega_t
    else:
        b2a = report.beta2_tilde.real - dmq * chi * alpha
        B1 = lam * b2a / (2 * xi * xi)
    B2 = -(2 * B1 * xi + 2 * eta) / lam
    return B1, B2


def lyapunov_check(report: FixedPointReport, avg: AveragedSystem, env: Envelope,
                   alpha: float = 0.0, annulus=(0.01, 0.2), t_grid=(1e2, 1e3, 1e4),
                   sol: ParticularSolution | None = None, n_radii: int = 20,
                   n_angles: int = 72) -> LyapunovCheck:
    """Grid maximum of dV/dt along the truncated averaged flow around the particular solution."""
    if report.verdict != "locking_stable":
        raise ValueError("Lyapunov check needs a locking_stable report")
    B1, B2 = lyapunov_coefficients(report, avg, env, alpha)
    n, q, N = avg.n, avg.q, avg.N
    if sol is None:
        sol = particular_solution(report, avg, env, N)
    h = (q - n) / 2
    rad = np.linspace(annulus[0], annulus[1], n_radii)
    ang = np.linspace(0, 2 * math.pi, n_angles, endpoint=False)
    Rg, Ag = np.meshgrid(rad, ang, indexing="ij")
    z1 = (Rg * np.cos(Ag)).ravel()
    z2 = (Rg * np.sin(Ag)).ravel()
    by_t = {}
    for t in t_grid:
        mu, ell = env.mu(t), env.ell(t)
        mh = mu ** h
        rho = sol.rho(t) + z1
        phi = sol.phi(t) + mh * z2
        Lhat = sum(mu ** k * avg.Lambda_at(k).eval(rho, phi) for k in range(1, N + 1))
        Ohat = sum(mu ** k * avg.Omega_at(k).eval(rho, phi) for k in range(1, N + 1))
        dz1 = Lhat - sol.rho_dot(t)
        dz2 = (Ohat - sol.phi_dot(t)) / mh - h * ell * z2
        dV = (h * ell * mh * B2 * z1 * z2
              + (2 * B1 * z1 + mh * B2 * z2) * dz1
              + (2 * z2 + mh * B2 * z1) * dz2)
        by_t[float(t)] = float(np.max(dV))
    return LyapunovCheck(alpha, B1, B2, max(by_t.values()), by_t, B1 > 0)


# ---------------------------------------------------------------- horizon
def horizon_exponent(mode: str, n: int, p: int, q: int) -> int:
    """Envelope power whose integral sets the probability window."""
    if mode == "locking":
        return 2 * p - q + n
    return min(2 * p, n + 1)


# ---------------------------------------------------------------- partition scans
def boundary_ex0(B0, eps):
    """Closed-form thresholds ``(g_plus, g_minus)`` on Q1 for the two ex0 locking families."""
    e2 = eps * eps
    if B0 < -3 * e2 / 32:
        gp = -2 * (B0 + 7 * e2 / 32)
    else:
        gp = -e2 / 4
    return gp, -gp


def boundary_ex2(B1, eps):
    """Closed-form threshold on B0 above which ex2 has a stable locked state."""
    e2 = eps * eps
    return -(3 * e2 + 2 * math.sqrt(16 * B1 * B1 + e2 * e2)) / 16


def closed_form_label(base, x, y, eps):
    if base == "ex0":
        gp, gm = boundary_ex0(x, eps)
        plus, minus = y > gp, y < gm
        return plus, minus
    return x > boundary_ex2(y, eps), False


PARTITION_AXES = {"ex0": ("B0", "Q1"), "ex2": ("B0", "B1")}


def _partition_cell(args):
    from .averaging import average_first
    from .sysdef.presets import resolve_polar
    base, x, y, eps, C0, r_lo = args
    if base == "ex0":
        ov = {"B0": x, "B1": y, "A1": 0.0, "C0": C0, "eps": eps}
    else:
        ov = {"B0": x, "B1": y, "A1": 0.0, "C0": C0, "eps": eps}
    sp = resolve_polar(base, **ov)
    sp = sp.with_params(r_min=r_lo)
    avg = average_first(sp, sp.n)
    plus = minus = False
    try:
        reps = analyze_locking(avg, sp.envelope, (r_lo, sp.R_max))
    except Exception:  # no resonant phase term
        reps = []
    for r in reps:
        if r.verdict != "locking_stable":
            continue
        if base == "ex2" or math.sin(2 * r.phi0) > 0:
            plus = True
        else:
            minus = True
    return plus, minus


def partition_scan(base: str, xs, ys, eps: float, C0: float = -1.0, workers: int = 1,
                   r_lo: float = 1e-3):
    """Classify every grid cell; returns rows ``(x, y, has_plus, has_minus)``.

    For ``ex0`` the axes are ``(B0, Q1)`` with ``A1 = 0`` so ``Q1 = B1``; the
    ``plus``/``minus`` flags mark stable locked states with ``sin 2 phi0`` of
    that sign.  For ``ex2`` the axes are ``(B0, B1)`` and only ``plus`` is used.
    """
    if base not in PARTITION_AXES:
        raise ValueError(f"partition scans are defined for {sorted(PARTITION_AXES)}")
    jobs = [(base, float(x), float(y), float(eps), float(C0), r_lo) for x in xs for y in ys]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as ex:
            res = list(ex.map(_partition_cell, jobs, chunksize=64))
    else:
        res = [_partition_cell(j) for j in jobs]
    return [(j[1], j[2], a, b) for j, (a, b) in zip(jobs, res)]


def partition_mismatches(base: str, rows, xs, ys, eps: float):
    """Cells whose label disagrees with the closed form and are not adjacent to its boundary."""
    xs, ys = list(xs), list(ys)
    ix = {float(x): i for i, x in enumerate(xs)}
    iy = {float(y): i for i, y in enumerate(ys)}
    expect = {}
    for x in xs:
        for y in ys:
            expect[(ix[float(x)], iy[float(y)])] = closed_form_label(base, float(x), float(y), eps)
    bad = []
    for x, y, a, b in rows:
        i, j = ix[x], iy[y]
        e = expect[(i, j)]
        if (a, b) == tuple(e):
            continue
        near = False
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                nb = expect.get((i + di, j + dj))
                if nb is not None and nb != e:
                    near = True
        if not near:
            bad.append((x, y, (a, b), e))
    return bad
