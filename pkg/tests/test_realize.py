import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hjmaffine import curvealg as ca
from hjmaffine import realize as rz
from hjmaffine import volspec as vs
from hjmaffine.curvealg import ExpPolyCurve
from hjmaffine.errors import Inconclusive, SingularTransform
from hjmaffine.volspec import Phi, PointEval, TanhAffine, VolatilitySpec, YieldEval, constant_phi

from conftest import SPACE, E, ln2_start_curve, start_curve, vasicek_vol

ONE = ExpPolyCurve.constant(1.0)


def tanh_spec():
    return VolatilitySpec((E(-1.0, 0.01),), (Phi(TanhAffine(0.5, (2.0,)), (PointEval(0.0),)),), SPACE)


def two_factor_spec():
    phis = (Phi(TanhAffine(0.2, (1.0, 0.5)), (PointEval(0.0), YieldEval(1.0))), constant_phi(0.5))
    return VolatilitySpec((E(-1.0, 0.01), E(-2.0, 0.02)), phis, SPACE)


def catalog():
    h0 = start_curve()
    out = [
        ("vasicek_shift", rz.build(vasicek_vol(), h0, "shift")),
        ("vasicek_constant", rz.build(vasicek_vol(), h0, "constant_vol")),
        ("hump_constant", rz.build(VolatilitySpec((E(-1.0, 0.01, 1),), (constant_phi(),), SPACE), h0, "constant_vol")),
        ("tanh", rz.build(tanh_spec(), h0)),
        ("two_factor", rz.build(two_factor_spec(), h0)),
        ("zero_vol", rz.build(VolatilitySpec((E(-1.0),), (constant_phi(0.0),), SPACE), h0)),
    ]
    return out


CATALOG = catalog()


# Krylov spaces -------------------------------------------------------------------

def test_krylov_examples():
    assert rz.krylov(E(-1.0)).dimension == 1
    k = rz.krylov(E(-1.0, 1.0, 1))
    assert k.dimension == 2 == k.formula_dimension
    assert ca.rank([*k.basis, E(-1.0), E(-1.0, 1.0, 1)]) == 2
    osc = ExpPolyCurve([(complex(-1, 1), [1.0])])  # e^{-x} cos x
    assert rz.krylov(osc).dimension == 2


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_krylov_dimension_formula_and_closure(seed):
    # well separated rates: the derivative stack of nearly equal rates is
    # numerically rank deficient at any fixed tolerance
    r = np.random.default_rng(seed)
    rates = r.choice([-0.8, -1.2, -1.7, -2.3, -3.0], size=r.integers(1, 4), replace=False)
    terms = []
    for mu in rates:
        im = r.choice([0.0, 0.7, 1.5])
        terms.append((complex(mu, im), r.normal(size=r.integers(1, 4)) + 1j * im * r.normal()))
    lam = ExpPolyCurve(terms)
    k = rz.krylov(lam)
    assert k.dimension == k.formula_dimension
    ca.coords(k.basis[-1].derivative(), k.basis)


# build ----------------------------------------------------------------------------

def test_vasicek_build(vasicek_real):
    R = vasicek_real
    assert (R.d, R.p, R.q) == (2, 1, 1)
    assert ca.rank(list(R.basis) + [E(-1.0), E(-2.0)]) == 2
    # lambda_1 = 0.01 e^{-x}, lambda_2 = lambda_1 Lambda_1 = 1e-4 (e^{-x} - e^{-2x})
    assert R.basis[1].allclose((E(-1.0) - E(-2.0)).scale(1e-4), atol=1e-18)
    assert np.allclose(R.A_matrix, [[-1.0, 0.0], [0.01, -2.0]], atol=1e-12)
    assert np.allclose(R.C_matrix[:, 0, 0], [0.0, 1.0], atol=1e-12)


def test_two_direction_dimension():
    spec = VolatilitySpec((E(-1.0), E(-2.0)), (constant_phi(), constant_phi()), SPACE)
    R = rz.build(spec, start_curve())
    assert (R.q, R.d) == (2, 4)
    assert ca.rank(list(R.basis) + [E(-1.0), E(-2.0), E(-3.0), E(-4.0)]) == 4


@pytest.mark.parametrize("name,R", CATALOG)
def test_basis_is_shift_invariant(name, R):
    for i, b in enumerate(R.basis):
        assert ca.combine(R.A_matrix[i], R.basis).allclose(b.derivative(), atol=1e-12)


def test_psi_examples(vasicek_real, vasicek_const, h0):
    assert vasicek_real.psi(0.0).allclose(h0)
    flat = rz.build(vasicek_vol(), ExpPolyCurve.constant(0.05))
    assert flat.psi(1.0).allclose(ExpPolyCurve.constant(0.05))
    for t in (0.3, 1.0, 4.0):
        diff = vasicek_const.psi(t) - vasicek_real.psi(t)
        ca.coords(diff, vasicek_real.basis)  # raises when the difference leaves V


def test_mu_gamma_examples(vasicek_real):
    R = vasicek_real
    mu, gamma = R.mu_gamma(0.7, np.zeros(2))
    assert np.allclose(gamma, [1.0, 0.0])
    assert np.allclose(mu, R.C_matrix[:, 0, 0])
    y = np.array([0.3, -1.2])
    mu_y, _ = R.mu_gamma(0.7, y)
    assert np.allclose(mu_y - mu, R.A_matrix.T @ y, atol=1e-14)
    Z = rz.build(VolatilitySpec((E(-1.0),), (constant_phi(0.0),), SPACE), start_curve())
    mu, gamma = Z.mu_gamma(1.0, y)
    assert np.allclose(gamma, 0.0) and np.allclose(mu, Z.A_matrix.T @ y)
    # batch evaluation agrees with single points
    ys = np.random.default_rng(0).normal(size=(5, 2))
    mb, gb = R.mu_gamma(0.2, ys)
    assert np.allclose(mb[3], R.mu_gamma(0.2, ys[3])[0])


def test_realization_json_round_trip(vasicek_real):
    back = rz.AffineRealization.from_json(vasicek_real.to_json())
    a = rz.check_invariance(vasicek_real)
    b = rz.check_invariance(back)
    for ca_, cb in zip(a.checks, b.checks):
        assert abs(ca_.residual - cb.residual) <= 1e-12


# invariance and Riccati ---------------------------------------------------------------

@pytest.mark.parametrize("name,R", CATALOG)
def test_invariance_passes_for_catalog(name, R):
    rep = rz.check_invariance(R, n_samples=100, seed=0)
    assert rep.passed, rep.to_json()


def test_invariance_detects_perturbed_shift_matrix(vasicek_real):
    A = vasicek_real.A_matrix.copy()
    A[0, 0] += 0.1
    rep = rz.check_invariance(vasicek_real.with_A(A))
    assert not rep.passed
    assert rep.check("drift_tangency").residual > 1e-3


@pytest.mark.parametrize("name,R", CATALOG)
def test_riccati_passes_for_catalog(name, R):
    rep = rz.riccati_check(R)
    assert rep.passed, rep.to_json()


def test_riccati_vasicek_coefficients(vasicek_real):
    rep = rz.riccati_check(vasicek_real)
    a = np.asarray(rep.extras["a"])
    # first equation: lambda_1 + c Lambda_1 = lambda_1(0) with c = 1
    assert a[0, 0] == pytest.approx(1.0, abs=1e-8)
    assert rep.extras["D1"] == [] and rep.extras["max_abs_b"] == 0.0


def test_riccati_constant_vol_has_no_quadratic_terms(vasicek_const):
    rep = rz.riccati_check(vasicek_const)
    assert rep.passed and rep.extras["max_abs_b"] == 0.0


def test_riccati_detects_perturbed_shift_matrix(vasicek_real):
    A = vasicek_real.A_matrix.copy()
    A[0, 0] += 0.1
    assert not rz.riccati_check(vasicek_real.with_A(A)).passed


def test_report_json_is_sorted_and_stable(vasicek_real):
    a = rz.check_invariance(vasicek_real).dumps()
    assert a == rz.check_invariance(vasicek_real).dumps()
    assert '"checks"' in a


# singular set -----------------------------------------------------------------------------

def test_singular_examples(vasicek_real, vasicek_const):
    S = rz.singular_set(vasicek_const)
    assert S.dimension == vasicek_const.d + 1
    h = S.offset + ExpPolyCurve.constant(0.03)
    assert rz.in_singular(vasicek_const, h)
    assert rz.in_singular(vasicek_real, start_curve())
    assert rz.in_singular(vasicek_real, start_curve() + vasicek_real.basis[0])
    assert not rz.in_singular(vasicek_real, ExpPolyCurve.constant(0.05) + E(-1.0, 0.01, 1))


def test_singular_cross_check_agrees(vasicek_real):
    for h in (start_curve(), ExpPolyCurve.constant(0.05) + E(-1.0, 0.01, 1), start_curve() + E(-3.0, 0.02)):
        d_sigma, d_nu = rz.singular_residuals(vasicek_real, h)
        assert (d_sigma <= 1e-9) == (d_nu <= 1e-9)


@settings(max_examples=25, deadline=None)
@given(st.floats(-1.0, 1.0), st.floats(-1.0, 1.0), st.floats(-0.1, 0.1))
def test_sigma_plus_v_is_sigma(a, b, c):
    R = rz.build(vasicek_vol(), start_curve())
    h = ExpPolyCurve.constant(c) + R.Lambdas[0].scale(3.0)
    assert rz.in_singular(R, h)
    assert rz.in_singular(R, h + ca.combine([a, b], R.basis))


def test_entry_time_examples(vasicek_real):
    assert rz.entry_time(vasicek_real, start_curve()) == 0.0
    assert rz.entry_time(vasicek_real, ExpPolyCurve.constant(0.05) + E(-1.0, 0.01, 1)) == math.inf
    assert abs(rz.entry_time(vasicek_real, ln2_start_curve()) - math.log(2.0)) <= 1e-9


def test_entry_time_reports_inconclusive_scan(vasicek_real):
    h = start_curve() + E(-3.0, 1e-6) + E(-4.0, 1.0)
    with pytest.raises(Inconclusive):
        rz.entry_time(vasicek_real, h, t_scan=5.0)
    assert rz.entry_time(vasicek_real, h) == math.inf


def test_ln2_fixture_dichotomy(vasicek_real):
    h = ln2_start_curve()
    b = math.log(2.0)
    for t in np.linspace(0.0, b, 8)[:-1]:
        assert rz.distance_to_singular(vasicek_real, h.shift(t)) > 1e-6
    for t in (b, b + 0.1, 1.0, 3.0):
        assert rz.distance_to_singular(vasicek_real, h.shift(t)) <= 1e-9


# state transform ---------------------------------------------------------------------------

def test_state_transform_examples():
    spec = VolatilitySpec((E(-1.0), E(-2.0)), (constant_phi(), constant_phi()), SPACE)
    R = rz.build(spec, start_curve(), "constant_vol")
    tr = rz.state_transform(R, [PointEval(0.0), PointEval(1.0)])
    assert np.allclose(tr.L, [[1, 1], [math.exp(-1), math.exp(-2)]], atol=1e-15)
    y = np.array([0.3, -0.2])
    z = tr.to_observed(0.4, y)
    assert np.allclose(tr.to_state(0.4, z), y, atol=1e-12)
    assert np.allclose(tr.to_observed(0.4, tr.to_state(0.4, z)), z, atol=1e-12)
    with pytest.raises(SingularTransform):
        rz.state_transform(R, [PointEval(0.0), PointEval(0.0)])


def test_state_transform_drift_matches_chain_rule(vasicek_const):
    tr = rz.state_transform(vasicek_const, [PointEval(0.0)])
    assert np.allclose(tr.L, [[0.01]])
    z = np.array([0.055])
    drift, diff = tr.drift_diffusion(0.5, z)
    eps = 1e-6
    # d/dt of l(psi(t)) by central differences
    rate = (tr.anchor(0.5 + eps) - tr.anchor(0.5 - eps)) / (2 * eps)
    y = tr.to_state(0.5, z)
    mu, gamma = vasicek_const.mu_gamma(0.5, y)
    assert drift == pytest.approx(rate + tr.L @ mu, abs=1e-8)
    assert diff == pytest.approx(tr.L @ gamma)
