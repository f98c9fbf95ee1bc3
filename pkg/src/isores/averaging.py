"""Resonance averaging of the drift.

First averaging removes the fast phase ``S`` from the drift order by order
through the near-identity change of variables

    r   = R   + sum_k u_k(R, Psi, S) mu^k
    psi = Psi + sum_k v_k(R, Psi, S) mu^k

and returns the averaged coefficients ``Lambda_k(r, psi)``, ``Omega_k(r, psi)``.
At each order the correction ``h_k`` collects the terms generated by the
lower orders: Taylor composition of the averaged drift at shifted arguments,
transport of the generators along the lower-order drift and phase rate, and
the Ito trace term.  Everything is exact TrigPoly algebra.

Second averaging (phase drift with ``n > q``) additionally averages the
amplitude equation over the slow phase, producing ``F_k(z)`` and the
generators ``e_k(r, psi)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .trigpoly import TrigPoly, TrigPolyError
from .sysdef.system import SystemSpec


class AveragingError(ValueError):
    """Hypotheses of the averaging construction are not met."""


Series = dict  # order -> TrigPoly


# ---------------------------------------------------------------- series helpers
def series_add(a: Series, b: Series, N: int) -> Series:
    out = dict(a)
    for k, v in b.items():
        if k <= N:
            out[k] = out[k] + v if k in out else v
    return {k: v for k, v in out.items() if not v.is_zero()}


def series_mul(a: Series, b: Series, N: int) -> Series:
    out: Series = {}
    for i, x in a.items():
        for j, y in b.items():
            k = i + j
            if k > N:
                continue
            pr = x * y
            out[k] = out[k] + pr if k in out else pr
    return {k: v for k, v in out.items() if not v.is_zero()}


def series_scale(a: Series, c: float) -> Series:
    return {k: v.scale(c) for k, v in a.items()}


def _min_order(s: Series) -> int | None:
    return min(s) if s else None


def shift_expand(P: TrigPoly, dR: Series, dPsi: Series, N: int) -> Series:
    """Orders 1..N of ``P(R + dR, Psi + dPsi) - P(R, Psi)`` by Taylor expansion.

    ``dR`` and ``dPsi`` are series in ``mu`` with no order-0 part.
    """
    if any(k < 1 for k in list(dR) + list(dPsi)):
        raise AveragingError("shifts must start at order >= 1")
    if P.is_zero() or (not dR and not dPsi):
        return {}
    one = {0: TrigPoly.const(1.0, P.denom)}
    mR, mP = _min_order(dR), _min_order(dPsi)
    amax = N // mR if mR else 0
    bmax = N // mP if mP else 0
    powR = [one]
    for _ in range(amax):
        powR.append(series_mul(powR[-1], dR, N))
    powP = [one]
    for _ in range(bmax):
        powP.append(series_mul(powP[-1], dPsi, N))
    out: Series = {}
    dr_cache = P
    for a in range(amax + 1):
        if a > 0:
            dr_cache = dr_cache.diff("r")
        dpa = dr_cache
        for b in range(bmax + 1):
            if b > 0:
                dpa = dpa.diff("psi")
            if a == 0 and b == 0:
                continue
            if dpa.is_zero():
                break
            fac = 1.0 / (math.factorial(a) * math.factorial(b))
            prod = series_mul(powR[a], powP[b], N)
            for k, v in prod.items():
                if k < 1:
                    continue
                term = (dpa * v).scale(fac)
                out[k] = out[k] + term if k in out else term
    return {k: v for k, v in out.items() if not v.is_zero()}


def hessian(w: TrigPoly):
    wr = w.diff("r")
    wp = w.diff("psi")
    return ((wr.diff("r"), wr.diff("psi")), (wp.diff("r"), wp.diff("psi")))


def trace_form(Bi, H, Bj) -> TrigPoly:
    """``tr(Bi^T H Bj)`` for 2x2 matrices of TrigPolys."""
    out = None
    for a in range(2):
        for b in range(2):
            if H[a][b].is_zero():
                continue
            for c in range(2):
                if Bi[a][c].is_zero() or Bj[b][c].is_zero():
                    continue
                t = Bi[a][c] * H[a][b] * Bj[b][c]
                out = t if out is None else out + t
    return out if out is not None else TrigPoly.zero(H[0][0].denom)


def _matrix_zero(m) -> bool:
    return all(x.is_zero() for row in m for x in row)


# ---------------------------------------------------------------- first averaging
@dataclass
class SlowFrame:
    """Drift ``b_k`` and diffusion ``B_k`` of ``(R, Psi)`` as series in ``mu``."""

    b1: Series
    b2: Series
    B: dict  # order -> 2x2 nested tuple
    denom: int


def to_slow_frame(spec: SystemSpec, N: int | None = None) -> SlowFrame:
    """Substitute ``phi = (kappa/varkappa) S + Psi`` and subtract the resonant phase rate."""
    kap, vk = spec.resonance.kappa, spec.resonance.varkappa
    d = spec.denom
    top = N if N is not None else spec.max_order()
    b1: Series = {}
    b2: Series = {}
    for k in range(1, top + 1):
        a1, a2 = spec.drift_at(k)
        x1 = a1.substitute_phase(kap, vk)
        x2 = a2.substitute_phase(kap, vk) - TrigPoly.const(kap * spec.phase.coeff(k) / vk, d)
        b1[k] = x1
        b2[k] = x2
    B = {}
    for k in sorted(spec.noise):
        mat = spec.noise_at(k)
        if _matrix_zero(mat):
            continue
        B[k] = tuple(tuple(x.substitute_phase(kap, vk) for x in row) for row in mat)
    return SlowFrame(b1, b2, B, d)


@dataclass
class AveragedSystem:
    N: int
    n: int
    p: int
    Lambda: dict
    Omega: dict
    u: dict
    v: dict
    h1: dict
    h2: dict
    s: tuple
    kappa: int
    varkappa: int
    eps: float
    frame: SlowFrame
    q: int | None = None
    omega_q_constant: bool | None = None

    @property
    def denom(self) -> int:
        return self.varkappa

    def Lambda_at(self, k: int) -> TrigPoly:
        return self.Lambda.get(k, TrigPoly.zero(self.varkappa))

    def Omega_at(self, k: int) -> TrigPoly:
        return self.Omega.get(k, TrigPoly.zero(self.varkappa))

    def s_at(self, k: int) -> float:
        return self.s[k] if k < len(self.s) else 0.0

    def to_json(self) -> dict:
        return {
            "N": self.N, "n": self.n, "p": self.p, "q": self.q,
            "Lambda": {str(k): v.to_json() for k, v in sorted(self.Lambda.items())},
            "Omega": {str(k): v.to_json() for k, v in sorted(self.Omega.items())},
            "Lambda_expr": {str(k): v.to_string() for k, v in sorted(self.Lambda.items())},
            "Omega_expr": {str(k): v.to_string() for k, v in sorted(self.Omega.items())},
            "denomS": self.varkappa,
        }


def average_first(spec: SystemSpec, N: int) -> AveragedSystem:
    """Averaged coefficients up to order ``N`` (``n <= N <= m``)."""
    m, _ = spec.envelope.params()
    if N > m:
        raise AveragingError(f"averaging order N={N} exceeds m={m} allowed by the envelope")
    if N < 1:
        raise AveragingError("N must be positive")
    if spec.known_order is not None and N > spec.known_order:
        raise AveragingError(
            f"coefficients are only known up to order {spec.known_order}; cannot average to N={N}")
    fr = to_slow_frame(spec, N)
    d = fr.denom
    s0 = spec.phase.s0
    eps2 = spec.eps ** 2
    zero = TrigPoly.zero(d)
    Lam: dict = {}
    Om: dict = {}
    u: dict = {}
    v: dict = {}
    H1: dict = {}
    H2: dict = {}
    for k in range(1, N + 1):
        h1, h2 = _h_tilde(k, fr, Lam, Om, u, v, spec.phase, spec.p, eps2, N, d)
        H1[k], H2[k] = h1, h2
        rhs1 = fr.b1.get(k, zero) - h1
        rhs2 = fr.b2.get(k, zero) - h2
        L = rhs1.average_S()
        O = rhs2.average_S()
        Lam[k], Om[k] = L, O
        u[k] = (L - rhs1).antiderivative_S().scale(1.0 / s0)
        v[k] = (O - rhs2).antiderivative_S().scale(1.0 / s0)
    avg = AveragedSystem(N=N, n=spec.n, p=spec.p, Lambda=Lam, Omega=Om, u=u, v=v, h1=H1, h2=H2,
                         s=spec.phase.s, kappa=spec.resonance.kappa,
                         varkappa=spec.resonance.varkappa, eps=spec.eps, frame=fr)
    try:
        q, const = find_q(avg)
        avg.q, avg.omega_q_constant = q, const
    except AveragingError:
        pass
    return avg


def _h_tilde(k, fr: SlowFrame, Lam, Om, u, v, phase, p, eps2, N, d):
    """Correction ``h_k`` built from orders below ``k``."""
    zero = TrigPoly.zero(d)
    h1, h2 = zero, zero
    # composition: averaged drift evaluated at the shifted point
    U = {j: u[j] for j in range(1, k) if not u[j].is_zero()}
    V = {j: v[j] for j in range(1, k) if not v[j].is_zero()}
    if U or V:
        for i in range(1, k):
            c1 = shift_expand(Lam[i], U, V, k - i).get(k - i)
            c2 = shift_expand(Om[i], U, V, k - i).get(k - i)
            if c1 is not None:
                h1 = h1 + c1
            if c2 is not None:
                h2 = h2 + c2
    # transport along the lower-order drift and phase rate
    for j in range(1, k):
        uj, vj = u[k - j], v[k - j]
        bj1, bj2 = fr.b1.get(j, zero), fr.b2.get(j, zero)
        sj = phase.coeff(j)
        for w, sign_slot in ((uj, 1), (vj, 2)):
            if w.is_zero():
                continue
            t = bj1 * w.diff("r") + bj2 * w.diff("psi")
            if sj:
                t = t + w.diff("S").scale(sj)
            if sign_slot == 1:
                h1 = h1 - t
            else:
                h2 = h2 - t
    # Ito trace term
    if eps2 and fr.B:
        for l in range(1, k):
            for i, Bi in fr.B.items():
                for j, Bj in fr.B.items():
                    if i + j + l != k or i < p or j < p:
                        continue
                    for w, slot in ((u[l], 1), (v[l], 2)):
                        if w.is_zero():
                            continue
                        t = trace_form(Bi, hessian(w), Bj).scale(0.5 * eps2)
                        if slot == 1:
                            h1 = h1 - t
                        else:
                            h2 = h2 - t
    return h1, h2


def find_q(avg: AveragedSystem) -> tuple[int, bool]:
    """Smallest order with a nonzero averaged phase coefficient, and whether it is constant."""
    for k in range(1, avg.N + 1):
        O = avg.Omega.get(k)
        if O is not None and not O.is_zero():
            return k, O.is_const() and not O.has_angle() and O.rpows() <= {0}
    raise AveragingError("no resonant phase dynamics at this order: all Omega_k vanish up to N")


# ---------------------------------------------------------------- second averaging
@dataclass
class SecondAveraged:
    F: dict
    e: dict
    q: int
    s_q: float
    n: int
    N: int
    C: dict = field(default_factory=dict)

    def F_at(self, k: int) -> TrigPoly:
        return self.F.get(k, TrigPoly.zero(next(iter(self.F.values())).denom if self.F else 1))

    def to_json(self) -> dict:
        return {"q": self.q, "s_q": self.s_q,
                "F": {str(k): v.to_json() for k, v in sorted(self.F.items())},
                "F_expr": {str(k): v.to_string() for k, v in sorted(self.F.items())}}


def inverse_shift(avg: AveragedSystem, N: int):
    """Series ``(U, V)`` with ``R = r + U(r, psi, S)``, ``Psi = psi + V`` inverting the first transform."""
    U: Series = {}
    V: Series = {}
    u = {k: w for k, w in avg.u.items() if not w.is_zero() and k <= N}
    v = {k: w for k, w in avg.v.items() if not w.is_zero() and k <= N}
    for _ in range(N):
        nU: Series = {}
        nV: Series = {}
        for k, w in u.items():
            nU = series_add(nU, {k: -w}, N)
            sh = shift_expand(w, U, V, N - k) if (U or V) and N - k >= 1 else {}
            nU = series_add(nU, {j + k: -x for j, x in sh.items()}, N)
        for k, w in v.items():
            nV = series_add(nV, {k: -w}, N)
            sh = shift_expand(w, U, V, N - k) if (U or V) and N - k >= 1 else {}
            nV = series_add(nV, {j + k: -x for j, x in sh.items()}, N)
        U, V = nU, nV
    return U, V


def c_matrix_series(avg: AveragedSystem, N: int) -> dict:
    """Diffusion of ``(r, psi)`` as ``{order: 2x2}``: ``J(U_N, V_N) B`` at the inverse transform."""
    fr = avg.frame
    d = avg.varkappa
    zero = TrigPoly.zero(d)
    one = TrigPoly.const(1.0, d)
    # Jacobian series: identity at order 0
    J = {0: ((one, zero), (zero, one))}
    for k in range(1, N + 1):
        uk, vk = avg.u.get(k, zero), avg.v.get(k, zero)
        if uk.is_zero() and vk.is_zero():
            continue
        J[k] = ((uk.diff("r"), uk.diff("psi")), (vk.diff("r"), vk.diff("psi")))
    JB: dict = {}
    for i, Ji in J.items():
        for j, Bj in fr.B.items():
            k = i + j
            if k > N:
                continue
            prod = tuple(tuple(Ji[a][0] * Bj[0][c] + Ji[a][1] * Bj[1][c] for c in range(2))
                         for a in range(2))
            if k in JB:
                JB[k] = tuple(tuple(JB[k][a][c] + prod[a][c] for c in range(2)) for a in range(2))
            else:
                JB[k] = prod
    U, V = inverse_shift(avg, N)
    C: dict = {}
    for k, M in JB.items():
        entries = [[{k: M[a][c]} for c in range(2)] for a in range(2)]
        for a in range(2):
            for c in range(2):
                sh = shift_expand(M[a][c], U, V, N - k) if N - k >= 1 else {}
                for j, x in sh.items():
                    entries[a][c] = series_add(entries[a][c], {k + j: x}, N)
        for a in range(2):
            for c in range(2):
                for kk, x in entries[a][c].items():
                    if kk not in C:
                        C[kk] = [[zero, zero], [zero, zero]]
                    C[kk][a][c] = C[kk][a][c] + x
    return {k: tuple(tuple(row) for row in M) for k, M in sorted(C.items())}


def average_second(avg: AveragedSystem) -> SecondAveraged:
    """Average the amplitude equation over the slow phase when the phase drifts."""
    if avg.q is None:
        raise AveragingError("second averaging needs a resonant order q")
    n, p, q, N = avg.n, avg.p, avg.q, avg.N
    s_q = avg.s_at(q)
    if not (n > q and 2 * p > q and s_q != 0.0):
        raise AveragingError(
            f"second averaging requires n > q, 2p > q and s_q != 0 (n={n}, p={p}, q={q}, s_q={s_q})")
    d = avg.varkappa
    zero = TrigPoly.zero(d)
    coef = -avg.kappa * s_q / avg.varkappa  # multiplies d/dpsi e_{k-q}
    eps2 = avg.eps ** 2
    need_trace = eps2 > 0 and n + 2 * p - q <= N
    C = c_matrix_series(avg, N) if need_trace else {}
    F: dict = {}
    e: dict = {}
    for k in range(n, N + 1):
        g = zero
        E = {j: w for j, w in e.items() if not w.is_zero()}
        if E:
            for i in range(n, k):
                c = shift_expand(F[i], E, {}, k - i).get(k - i)
                if c is not None:
                    g = g + c
        for i in range(n, k + 1):
            j = k - i
            if j in e and not e[j].is_zero():
                g = g - avg.Lambda_at(i) * e[j].diff("r")
        for i in range(q + 1, k + 1):
            j = k - i
            if j in e and not e[j].is_zero():
                g = g - avg.Omega_at(i) * e[j].diff("psi")
        if need_trace:
            for l, el in e.items():
                if el.is_zero():
                    continue
                H = hessian(el)
                for i, Ci in C.items():
                    for j, Cj in C.items():
                        if i + j + l != k or i < p or j < p:
                            continue
                        g = g - trace_form(Ci, H, Cj).average_S().scale(0.5 * eps2)
        g = g.average_S() if g.has_S() else g
        rhs = avg.Lambda_at(k) - g
        if rhs.has_S():
            raise AveragingError(f"order {k}: averaged amplitude drift still depends on S")
        Fk = rhs.average_psi()
        F[k] = Fk
        resid = Fk - rhs
        e[k - q] = resid.antiderivative_psi().scale(1.0 / coef) if not resid.is_zero() else zero
    return SecondAveraged(F=F, e=e, q=q, s_q=s_q, n=n, N=N, C=C)
