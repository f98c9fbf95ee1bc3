import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from isores.trigpoly import (COS, CONST, SIN, TrigDomainError, TrigPoly, TrigPolyError, add,
                             average_S, diff, mul, substitute_phase)


def T(coeff, rpow=0, kind="const", j=0, l=0, d=1):
    return TrigPoly.term(coeff, rpow, kind, j, l, d)


def test_add_examples():
    c = TrigPoly.cos(1)
    assert (c + c).terms == {(0, COS, 1, 0): 2.0}
    assert (c + (-c)).is_zero()
    p = T(1, 1, "sin", 0, 1) + T(1, 2, "sin", 0, 1)
    assert len(p) == 2


def test_add_rejects_mixed_denominators():
    with pytest.raises(TrigPolyError):
        add(TrigPoly.cos(0, 1, 1), TrigPoly.cos(0, 1, 2))


def test_mul_examples():
    c = TrigPoly.cos(1)
    assert (c * c).allclose(TrigPoly.const(0.5) + T(0.5, 0, "cos", 2))
    s = TrigPoly.sin(0, 1) * TrigPoly.cos(0, 1)
    assert s.allclose(T(0.5, 0, "sin", 0, 2))
    pr = T(1, 1, "cos", 1) * T(1, -1, "cos", 1)
    assert pr.allclose(TrigPoly.const(0.5) + T(0.5, 0, "cos", 2))
    with pytest.raises(TrigPolyError):
        mul(TrigPoly.cos(1, 0, 1), TrigPoly.cos(1, 0, 3))


def test_diff_examples():
    assert diff(T(1, 2, "cos", 2), "r").allclose(T(2, 1, "cos", 2))
    half = T(1, 0, "sin", 0, 1, 2)
    assert half.diff("S").allclose(T(0.5, 0, "cos", 0, 1, 2))
    assert TrigPoly.const(3.0).diff("psi").is_zero()


def test_substitute_phase_examples():
    got = substitute_phase(TrigPoly.cos(1), 1, 2)
    assert got.denom == 2 and got.allclose(T(1, 0, "cos", 1, 1, 2))
    cancel = TrigPoly.sin(2, -1).substitute_phase(1, 2)
    assert cancel.allclose(T(1, 0, "sin", 2, 0, 2))
    assert TrigPoly.const(1.5).substitute_phase(1, 2).allclose(TrigPoly.const(1.5, 2))


def test_average_S_examples():
    assert average_S(TrigPoly.sin(2)).allclose(TrigPoly.sin(2))
    p = T(1, 0, "cos", 1, 1, 2)
    assert average_S(p).is_zero()
    assert average_S(p * p).allclose(TrigPoly.const(0.5, 2))


def test_antiderivative_S_examples():
    assert TrigPoly.cos(0, 1).antiderivative_S().allclose(TrigPoly.sin(0, 1))
    half = T(1, 0, "sin", 0, 1, 2)
    assert half.antiderivative_S().allclose(T(-2, 0, "cos", 0, 1, 2))
    with pytest.raises(TrigPolyError):
        (TrigPoly.cos(0, 1) + TrigPoly.const(1.0)).antiderivative_S()


def test_average_psi_examples():
    B0, C0, Q1, eps = -1.0, -0.2, 2.5, 0.4
    r = TrigPoly.r
    p = (r(1) * (TrigPoly.const(32 * B0) + r(2).scale(24 * C0) + TrigPoly.sin(2).scale(16 * Q1)
                 + TrigPoly.const(6 * eps**2) - TrigPoly.cos(4).scale(eps**2))).scale(1 / 64)
    want = (r(1) * (TrigPoly.const(16 * B0) + r(2).scale(12 * C0)
                    + TrigPoly.const(3 * eps**2))).scale(1 / 32)
    assert p.average_psi().allclose(want, 1e-14)
    assert TrigPoly.sin(2).average_psi().is_zero()
    assert TrigPoly.const(2.0).average_psi().allclose(TrigPoly.const(2.0))
    with pytest.raises(TrigPolyError):
        TrigPoly.cos(1, 1).average_psi()


def test_eval_examples():
    assert T(1, 1, "cos", 1).eval(2.0, 0.0) == pytest.approx(2.0)
    assert TrigPoly.sin(2).eval(1.0, math.pi / 4) == pytest.approx(1.0)
    with pytest.raises(TrigDomainError):
        T(1, -1).eval(0.0)
    with pytest.raises(TrigDomainError):
        T(1, -1).eval(np.array([0.0, 1.0]))


def test_canonical_sign_and_kind():
    p = T(1.0, 0, "sin", -1, 2)
    ((key, c),) = p.items()
    assert key == (0, SIN, 1, -2) and c == -1.0
    q = T(1.0, 0, "cos", -1, 2)
    ((key, c),) = q.items()
    assert key == (0, COS, 1, -2) and c == 1.0
    # a sine with zero angle vanishes, a cosine becomes a constant
    assert T(2.0, 1, "sin", 0, 0).is_zero()
    ((key, c),) = T(2.0, 1, "cos", 0, 0).items()
    assert key[1] == CONST


def test_small_terms_dropped():
    p = TrigPoly([(1.0, 0, COS, 1, 0), (1e-15, 0, COS, 2, 0)])
    assert len(p) == 1


def test_json_round_trip():
    p = T(1.5, -2, "sin", 3, -1, 4) + T(0.25, 1, "cos", 0, 3, 4)
    assert TrigPoly.from_json(p.to_json(), 4) == p


# ---------------------------------------------------------------- properties
DENOMS = (1, 2, 3, 4)


@st.composite
def polys(draw, denom=None):
    d = denom if denom is not None else draw(st.sampled_from(DENOMS))
    n = draw(st.integers(0, 6))
    raw = []
    for _ in range(n):
        raw.append((round(draw(st.floats(-3, 3, allow_nan=False)), 6),
                    draw(st.integers(-2, 3)),
                    draw(st.sampled_from([COS, SIN, CONST])),
                    draw(st.integers(-3, 3)), draw(st.integers(-4, 4))))
    fixed = []
    for c, rp, kind, j, l in raw:
        if j == 0 and l == 0:
            kind = CONST
        elif kind == CONST:
            kind = COS
        fixed.append((c, rp, kind, j, l))
    return TrigPoly(fixed, d)


@st.composite
def pairs(draw):
    d = draw(st.sampled_from(DENOMS))
    return draw(polys(d)), draw(polys(d))


points = st.tuples(st.floats(0.2, 2.5), st.floats(-math.pi, math.pi), st.floats(-20, 20))


def _scale(*ps, r=1.0):
    return 1.0 + sum(abs(c) * max(r, 1 / r) ** 5 for p in ps for _, c in p.items())


@settings(max_examples=500, deadline=None)
@given(pairs(), points)
def test_add_mul_agree_with_eval(pq, pt):
    p, q = pq
    r, psi, S = pt
    a, b = p.eval(r, psi, S), q.eval(r, psi, S)
    sc = _scale(p, q, r=r)
    assert abs((p + q).eval(r, psi, S) - a - b) <= 1e-12 * sc
    assert abs((p * q).eval(r, psi, S) - a * b) <= 1e-12 * sc * sc


@settings(max_examples=500, deadline=None)
@given(polys())
def test_antiderivative_round_trip(p):
    zm = p - p.average_S()
    back = zm.antiderivative_S().diff("S")
    assert back.allclose(zm, 1e-12 * (1 + zm.max_abs_coeff()))
    assert zm.antiderivative_S().average_S().is_zero()


@settings(max_examples=500, deadline=None)
@given(polys(denom=1), points, st.sampled_from([(1, 2), (1, 1), (3, 2), (2, 3)]))
def test_substitute_phase_preserves_eval(p, pt, kv):
    r, psi, S = pt
    kap, vk = kv
    sub = p.substitute_phase(kap, vk)
    want = p.eval(r, kap / vk * S + psi, S)
    assert abs(sub.eval(r, psi, S) - want) <= 1e-12 * _scale(p, r=r)


@settings(max_examples=500, deadline=None)
@given(polys())
def test_canonicalization_idempotent(p):
    again = TrigPoly(p.terms, p.denom)
    assert again == p and again.terms == p.terms


@settings(max_examples=100, deadline=None)
@given(polys())
def test_average_S_matches_quadrature(p):
    rs = np.linspace(0.3, 2.0, 5)
    psis = np.linspace(0, 2 * math.pi, 8, endpoint=False)
    for nodes, tol in ((1024, 1e-12), (4096, 1e-10)):
        S = np.arange(nodes) * (2 * math.pi * p.denom / nodes)
        R, P, SS = np.meshgrid(rs, psis, S, indexing="ij")
        quad = p.eval(R, P, SS).mean(axis=-1)
        exact = p.average_S().eval(R[..., 0], P[..., 0])
        sc = 1.0 + np.abs(exact) + _scale(p, r=0.3)
        assert np.all(np.abs(quad - exact) <= tol * sc)


def test_vector_eval_matches_scalar():
    p = T(1.5, -1, "sin", 2, 1, 2) + T(-0.5, 3, "cos", 1, -3, 2) + TrigPoly.const(0.1, 2)
    r = np.array([0.5, 1.0, 2.0])
    psi = np.array([0.1, -1.0, 2.0])
    S = np.array([3.0, 0.0, -7.0])
    vec = p.eval(r, psi, S)
    for i in range(3):
        assert vec[i] == pytest.approx(p.eval(float(r[i]), float(psi[i]), float(S[i])), rel=1e-14)
