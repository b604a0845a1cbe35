import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from hjmaffine import curvealg as ca
from hjmaffine.curvealg import ExpPolyCurve, PiecewiseCurve, SpaceParams
from hjmaffine.errors import DependentBasis, DivergentIntegral, NotInSpan

from conftest import quad_norm

E = ExpPolyCurve.exp
ONE = ExpPolyCurve.constant(1.0)


# strategies ---------------------------------------------------------------------------

coef = st.floats(-2.0, 2.0, allow_nan=False).filter(lambda v: abs(v) > 1e-3)


@st.composite
def curves(draw, rate_lo=-3.0, rate_hi=-0.8, constant=True):
    terms = []
    for _ in range(draw(st.integers(1, 3))):
        re = draw(st.floats(rate_lo, rate_hi))
        im = draw(st.sampled_from([0.0, 0.0, draw(st.floats(0.3, 2.0))]))
        cs = draw(st.lists(coef, min_size=1, max_size=3))
        terms.append((complex(re, im), [complex(c, draw(coef)) if im else c for c in cs]))
    if constant and draw(st.booleans()):
        terms.append((0.0, [draw(coef)]))
    return ExpPolyCurve(terms)


times = st.floats(0.0, 3.0)


# examples -------------------------------------------------------------------------------

def test_eval_examples():
    assert E(-1.0)(0.0) == 1.0
    assert (ONE - E(-1.0)).limit_at_infinity() == 1.0
    # x e^{-x} at 1 is e^{-1}
    assert E(-1.0, 1.0, 1).eval(1.0) == pytest.approx(0.36787944117144233, rel=1e-15)
    with pytest.raises(ValueError):
        E(-1.0).eval(float("nan"))


def test_eval_vectorized_matches_scalar():
    h = E(complex(-1, 2), 1 + 0.5j, 1) + E(-0.3, 2.0) + ONE
    xs = np.linspace(0, 4, 17)
    assert np.allclose(h(xs), [h.eval(x) for x in xs], rtol=0, atol=1e-15)
    assert np.isrealobj(h(xs))


def test_conjugate_closure_and_canonical_form():
    # a lone non-real term is read as the real part of the pair
    h = ExpPolyCurve([(complex(-1, 1), [2.0])])
    assert sorted(abs(r.imag) for r in h.rates) == [1.0, 1.0]
    xs = np.linspace(0, 3, 7)
    assert np.allclose(h(xs), 2 * np.exp(-xs) * np.cos(xs), atol=1e-15)
    # close rates merge, tiny coefficients vanish
    g = ExpPolyCurve([(-1.0, [1.0]), (-1.0 + 1e-14, [1.0]), (-2.0, [1e-20])])
    assert g.rates == [-1.0]
    assert ExpPolyCurve().is_zero()
    assert (E(-1.0) - E(-1.0)).is_zero()


def test_derivative_antiderivative_examples():
    assert E(-1.0).derivative().allclose(E(-1.0, -1.0))
    assert E(-1.0).antiderivative().allclose(ONE - E(-1.0))
    # 1 - (1+x) e^{-x}
    lam = E(-1.0, 1.0, 1).antiderivative()
    assert lam.allclose(ONE - E(-1.0) - E(-1.0, 1.0, 1))
    assert lam.derivative().allclose(E(-1.0, 1.0, 1))


def test_multiply_examples():
    assert (E(-1.0) * (ONE - E(-1.0))).allclose(E(-1.0) - E(-2.0))
    assert (E(-1.0) * ExpPolyCurve.zero()).is_zero()
    sq = E(-1.0, 1.0, 1) * E(-1.0, 1.0, 1)
    assert sq.allclose(E(-2.0, 1.0, 2))
    xs = np.linspace(0, 5, 41)
    assert np.allclose(sq(xs), (xs * np.exp(-xs)) ** 2, atol=1e-15)


def test_shift_examples():
    assert E(-1.0).shift(math.log(2)).allclose(E(-1.0, 0.5))
    h = E(-1.0, 1.0, 1) + ONE
    assert h.shift(0.0).allclose(h)
    g = E(-1.0, 1.0, 1).shift(1.0)
    assert g.allclose(E(-1.0, math.exp(-1)) + E(-1.0, math.exp(-1), 1))
    xs = np.linspace(0, 4, 21)
    assert np.allclose(g(xs), E(-1.0, 1.0, 1)(1.0 + xs), atol=1e-15)
    with pytest.raises(ValueError):
        h.shift(-1.0)


def test_norm_examples():
    assert ca.norm_beta(E(-1.0), 1.0) == pytest.approx(math.sqrt(2.0), rel=1e-14)
    assert quad_norm(E(-1.0), 1.0) == pytest.approx(math.sqrt(2.0), rel=1e-10)
    assert ca.norm_beta(ExpPolyCurve.constant(-0.3), 0.5) == pytest.approx(0.3, rel=1e-15)
    with pytest.raises(DivergentIntegral):
        ca.norm_beta(E(-1.0), 3.0)


def test_membership_examples():
    assert ca.membership(E(-1.0), 1.0) == (True, True)
    assert ca.membership(ExpPolyCurve.constant(0.05), 1.0) == (True, False)
    assert ca.membership(E(-1.0), 3.0) == (False, False)
    assert ca.membership(E(0.0, 1.0, 1), 0.5) == (False, False)  # x is not in H_beta
    assert ca.membership(ExpPolyCurve(), 0.5) == (True, True)


def test_coords_and_rank_examples():
    basis = [E(-1.0), E(-2.0)]
    assert np.allclose(ca.coords(E(-1.0) - E(-2.0), basis), [1.0, -1.0], atol=1e-15)
    assert ca.rank([E(-1.0), E(-1.0, 2.0)]) == 1
    assert ca.rank([E(-1.0), E(-1.0, 1.0, 1), E(-2.0)]) == 3
    with pytest.raises(NotInSpan):
        ca.coords(E(-3.0), basis)
    with pytest.raises(DependentBasis):
        ca.coords(E(-1.0), [E(-1.0), E(-1.0, 2.0)])


def test_project_returns_residual_curve():
    c, r = ca.project(E(-1.0, 2.0) + E(-3.0), [E(-1.0), E(-2.0)])
    assert np.allclose(c, [2.0, 0.0], atol=1e-14)
    assert r.allclose(E(-3.0))


def test_sup_constant_is_one_plus_inverse_beta():
    assert SpaceParams(0.5, 1.5).sup_constant() == pytest.approx(math.sqrt(3.0))
    with pytest.raises(ValueError):
        SpaceParams(1.0, 0.5)


def test_sup_norm_reaches_interior_maximum():
    # x e^{-x} peaks at x=1
    assert ca.sup_norm(E(-1.0, 1.0, 1)) == pytest.approx(math.exp(-1), abs=1e-12)
    assert ca.sup_norm(ONE - E(-1.0)) == pytest.approx(1.0, abs=1e-15)


def test_json_round_trip():
    h = E(complex(-1, 2), 1 + 0.5j, 1) + ONE + E(-0.7, 3.0)
    assert ExpPolyCurve.from_json(h.to_json()).allclose(h, atol=0.0)
    g = ca.curve_from_json(h.to_json())
    assert g.allclose(h)


# piecewise curves ----------------------------------------------------------------------

def test_piecewise_basic_operations():
    b = 0.7
    tail = ExpPolyCurve.constant(0.05) + E(-1.0, 0.01)
    head = tail + E(-1.0, 0.01, 2) + E(-1.0, -0.02 * b, 1) + E(-1.0, 0.01 * b * b)
    pw = PiecewiseCurve([b], [head, tail])
    xs = np.array([0.0, 0.3, b, 1.5])
    assert np.allclose(pw(xs), [head.eval(0.0), head.eval(0.3), tail.eval(b), tail.eval(1.5)])
    assert max(pw.continuity_gaps(order=1)) < 1e-15
    assert ca.membership(pw, 0.5).in_H_beta
    # shifting past the knot leaves the tail
    s = pw.shift(1.0)
    assert isinstance(s, ExpPolyCurve) and s.allclose(tail.shift(1.0))
    # integral is continuous across the knot
    L = pw.antiderivative()
    assert L(b - 1e-12) == pytest.approx(L(b + 1e-12), abs=1e-12)
    assert pw.integral(2.0) == pytest.approx(quad(pw.eval, 0, 2, points=[b], epsabs=1e-14)[0], abs=1e-13)
    assert ca.norm_beta(pw, 0.5) == pytest.approx(
        math.sqrt(pw(0.0) ** 2 + quad(lambda x: pw.derivative().eval(x) ** 2 * math.exp(0.5 * x),
                                       0, 60, points=[b], epsabs=1e-16, limit=200)[0]), rel=1e-9)
    assert isinstance(ca.curve_from_json(pw.to_json()), PiecewiseCurve)


# properties ---------------------------------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(curves(), times, times)
def test_shift_semigroup(h, s, t):
    a, b = h.shift(s + t), h.shift(s).shift(t)
    keys = ca.coef_layout([a, b])
    assert np.allclose(ca.coef_vector(a, keys), ca.coef_vector(b, keys), rtol=0, atol=1e-12 * max(1, h.max_coeff()) * 50)


@settings(max_examples=60, deadline=None)
@given(curves())
def test_fundamental_theorem(h):
    assert h.antiderivative().derivative().allclose(h, atol=1e-12)
    assert h.derivative().antiderivative().allclose(h - ExpPolyCurve.constant(h.eval(0.0)), atol=1e-11)


@settings(max_examples=60, deadline=None)
@given(curves(), curves())
def test_leibniz(h, g):
    lhs = (h * g).derivative()
    rhs = h.derivative() * g + h * g.derivative()
    assert lhs.allclose(rhs, atol=1e-11)


@settings(max_examples=40, deadline=None)
@given(curves(), st.floats(0.0, 5.0))
def test_shift_matches_evaluation(h, t):
    xs = np.linspace(0, 6, 13)
    assert np.allclose(h.shift(t)(xs), h(t + xs), rtol=1e-11, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(curves(), st.floats(0.2, 1.5))
def test_norm_closed_form_matches_quadrature(h, beta):
    if not ca.membership(h, beta).in_H_beta:
        return
    assert ca.norm_beta(h, beta) == pytest.approx(quad_norm(h, beta), rel=1e-8)


@settings(max_examples=40, deadline=None)
@given(curves(), st.floats(0.2, 1.5))
def test_sup_bound(h, beta):
    if ca.membership(h, beta).in_H_beta:
        assert ca.sup_norm(h) <= SpaceParams(beta, beta + 1).sup_constant() * ca.norm_beta(h, beta) * (1 + 1e-12)


@settings(max_examples=40, deadline=None)
@given(curves(), st.floats(0.1, 0.7), st.floats(0.05, 0.8))
def test_embedding(h, beta, gap):
    bp = beta + gap
    if ca.membership(h, bp).in_H_beta:
        assert ca.norm_beta(h, beta) <= ca.norm_beta(h, bp) * (1 + 1e-12)


@settings(max_examples=40, deadline=None)
@given(curves(constant=False), st.floats(0.1, 0.7), st.floats(0.05, 0.8))
def test_integral_operator_bound(lam, beta, gap):
    bp = beta + gap
    if not ca.membership(lam, bp).in_H0_beta:
        return
    bound = (bp * (bp - beta)) ** -0.5 * ca.norm_beta(lam, bp)
    assert ca.norm_beta(lam.antiderivative(), beta) <= bound * (1 + 1e-12)


@settings(max_examples=40, deadline=None)
@given(curves(), curves())
def test_coords_recover_combination(g, h):
    basis = [g, h]
    if ca.rank(basis) < 2:
        return
    target = g.scale(0.3) - h.scale(1.7)
    assert np.allclose(ca.coords(target, basis), [0.3, -1.7], atol=1e-9)
