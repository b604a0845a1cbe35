import math

import numpy as np
import pytest

from hjmaffine import market as mk
from hjmaffine import simlab as sl
from hjmaffine.curvealg import ExpPolyCurve
from hjmaffine.errors import UnsupportedPreset
from hjmaffine.realize import build
from hjmaffine.volspec import VolatilitySpec, constant_phi

from conftest import SPACE, E, start_curve


def test_bond_price_examples():
    assert mk.bond_price(ExpPolyCurve.constant(0.05), 10.0) == pytest.approx(math.exp(-0.5), rel=1e-15)
    assert mk.bond_price(start_curve(), 0.0) == 1.0
    assert mk.bond_price(E(-1.0, 0.05), 1.0) == pytest.approx(math.exp(-0.05 * (1 - math.exp(-1))), rel=1e-15)
    assert mk.bond_price(E(-1.0, 0.05), 1.0) == pytest.approx(0.9688882217838337, rel=1e-15)
    with pytest.raises(ValueError):
        mk.bond_price(start_curve(), -1.0)


def test_log_bond_price_is_minus_integral(vasicek_real):
    p = sl.simulate_coords(vasicek_real, None, sl.SimConfig(dt=1e-2, n_steps=100, seed=9))
    for k, r in zip(p.saved_steps, p.curves):
        for tau in (0.5, 2.0, 7.0):
            assert math.log(mk.bond_price(r, tau)) == pytest.approx(-r.antiderivative()(tau), rel=1e-14)


def _path_with_rate(rate_fn, dt, n):
    t = dt * np.arange(n + 1)
    return sl.SimPath(t, np.zeros((n + 1, 0)), rate_fn(t), np.array([0]), [], np.zeros(n), None, 0.0, "euler")


def test_bank_account_examples():
    B = mk.bank_account(_path_with_rate(np.zeros_like, 0.01, 200))
    assert np.all(B == 1.0)
    B = mk.bank_account(_path_with_rate(lambda t: np.full_like(t, 0.05), 0.01, 200))
    assert B[0] == 1.0 and B[-1] == pytest.approx(math.exp(0.1), rel=1e-14)
    # trapezoid discounting is second order
    errs = []
    for n in (50, 100, 200):
        B = mk.bank_account(_path_with_rate(lambda t: 0.05 + 0.02 * np.sin(3 * t), 2.0 / n, n))
        exact = math.exp(0.1 + 0.02 * (1 - math.cos(6.0)) / 3)
        errs.append(abs(B[-1] - exact))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.05)


# CIR direction --------------------------------------------------------------------

CIR_PARAMS = [(0.1, 0.08), (0.5, 0.02), (0.0, 0.3), (2.0, 1.0)]


@pytest.mark.parametrize("kappa,vol_sq", CIR_PARAMS)
def test_cir_curve_riccati(kappa, vol_sq):
    c = mk.CIRCurve(kappa, vol_sq)
    x = np.linspace(0.0, 50.0, 20001)
    assert np.max(c.riccati_residual(x)) < 1e-10
    assert c.B(0.0) == 0.0 and c(0.0) == pytest.approx(1.0, abs=1e-15)
    B = c.B(x)
    assert np.all(np.diff(B) >= 0) and np.all(np.diff(B[:4000]) > 0) and B[-1] < 2.0 / (c.gamma_param + kappa) + 1e-12
    xs = np.linspace(0.0, 20.0, 201)
    assert np.allclose(c.numeric_B(xs), c.B(xs), rtol=0, atol=1e-9)
    h = 1e-5
    xs = xs[1:]
    assert np.allclose(c.dlam(xs), (c(xs + h) - c(xs - h)) / (2 * h), rtol=0, atol=1e-8)
    assert c.dlam(0.0) == pytest.approx(-kappa, abs=1e-14)


def test_cir_curve_gamma_and_membership():
    c = mk.CIRCurve(0.1, 0.08)
    assert c.gamma_param == pytest.approx(0.41231056256176607, rel=1e-15)
    # lambda decays like exp(-gamma x), too slowly for the stronger weight
    assert not c.in_H0(1.5) and c.in_H0(0.5)


# presets --------------------------------------------------------------------------

def test_preset_validation():
    with pytest.raises(UnsupportedPreset):
        mk.preset("black_karasinski")
    with pytest.raises(ValueError):
        mk.preset("hull_white_vasicek", c=0.5)  # -2c + beta' = 0.5 > 0
    with pytest.raises(ValueError):
        mk.preset("hull_white_vasicek", c=-1.0)
    with pytest.raises(ValueError):
        mk.preset("ho_lee", kappa=1.0)
    assert mk.preset("ho_lee").membership_warning
    assert not mk.preset("hull_white_vasicek").membership_warning
    assert mk.preset("hull_white_cir").membership_warning


def test_vasicek_preset_realizations():
    p = mk.preset("hull_white_vasicek")
    assert p.realization(start_curve()).d == 2
    m = mk.short_rate_realization(p, start_curve())
    assert m.dimension == 1 and np.allclose(m.L, [[0.01]])
    assert m.kappa == pytest.approx(1.0) and m.riccati_residual < 1e-10
    # Hull-White drift: f'(0,t) + c f(0,t) + rho^2 / (2c) (1 - e^{-2ct})
    t = np.array([0.0, 0.5, 1.0, 3.0])
    f, df = 0.05 + 0.01 * np.exp(-t), -0.01 * np.exp(-t)
    assert np.allclose(m.theta(t), df + f + 0.5e-4 * (1 - np.exp(-2 * t)), rtol=0, atol=1e-14)
    assert np.allclose(m.diffusion(0.0, np.array([0.1, 0.2])), 0.01)


def test_ho_lee_short_rate():
    m = mk.short_rate_realization(mk.preset("ho_lee"), start_curve())
    assert m.membership_warning and m.dimension == 1
    # Ho-Lee drift f'(0,t) + rho^2 t
    t = np.array([0.0, 1.0, 2.5])
    assert np.allclose(m.theta(t), -0.01 * np.exp(-t) + 1e-4 * t, rtol=0, atol=1e-14)


def test_cir_short_rate():
    p = mk.preset("hull_white_cir")
    m = mk.short_rate_realization(p, start_curve(), horizon=2.0)
    assert m.dimension == 1 and m.membership_warning
    assert m.riccati_coefficients == {"a": 0.1, "b": 0.04}
    model = m.source
    assert model.invariance_residuals(100, seed=0).max() < 1e-9
    assert model.phi[0] == start_curve()(0.0)
    # the trapezoid Volterra solve is second order
    ends = [mk.CIRShortRate(p, start_curve(), 1.0, dt).phi[-1] for dt in (2e-3, 1e-3, 5e-4)]
    assert (ends[1] - ends[0]) / (ends[2] - ends[1]) == pytest.approx(4.0, rel=0.05)
    # at t = 0 the anchor reproduces the initial bond curve
    assert model.log_anchor_bond(0, 3.0) == pytest.approx(start_curve().integral(3.0), rel=1e-14)
    with pytest.raises(UnsupportedPreset):
        p.realization(start_curve())


# martingale test -------------------------------------------------------------------

def test_martingale_without_volatility_is_exact():
    R = build(VolatilitySpec((E(-1.0),), (constant_phi(0.0),), SPACE), start_curve())
    rep = mk.martingale_test(R, start_curve(), T=5.0, t=1.0, n_paths=100)
    # every path is the same, so only the O(dt^2) trapezoid bias remains and
    # the standard error is at roundoff level
    assert abs(rep.estimate - rep.target) < 1e-9
    assert rep.standard_error < 1e-15
    fine = mk.martingale_test(R, start_curve(), T=5.0, t=1.0, n_paths=100, dt=5e-4)
    assert abs(rep.estimate - rep.target) / abs(fine.estimate - fine.target) == pytest.approx(4.0, rel=0.02)


@pytest.mark.parametrize("name", ["hull_white_vasicek", "ho_lee", "hull_white_cir"])
def test_martingale_all_presets(name):
    rep = mk.martingale_test(mk.preset(name), start_curve(), T=5.0, t=1.0, n_paths=10_000, seed=11)
    assert rep.standard_error > 0
    assert rep.z_score < 3, rep


def test_martingale_flat_curve_example():
    flat = ExpPolyCurve.constant(0.05)
    rep = mk.martingale_test(mk.preset("hull_white_vasicek"), flat, T=5.0, t=1.0, n_paths=10_000, seed=3)
    assert rep.target == pytest.approx(math.exp(-0.25), rel=1e-15)
    assert rep.z_score < 3


def test_martingale_report_outputs():
    rep = mk.martingale_test(mk.preset("hull_white_vasicek"), start_curve(), T=3.0, t=0.5, n_paths=200, seed=2)
    line = rep.csv_line().split(",")
    assert len(line) == len(mk.MartingaleReport.csv_header().split(","))
    assert rep.to_json()["n_paths"] == 200
    again = mk.martingale_test(mk.preset("hull_white_vasicek"), start_curve(), T=3.0, t=0.5, n_paths=200, seed=2)
    assert again.csv_line() == rep.csv_line()
    with pytest.raises(ValueError):
        mk.martingale_test(mk.preset("hull_white_vasicek"), start_curve(), T=1.0, t=1.0, n_paths=10)


def test_zeroed_drift_z_grows_with_paths():
    p = mk.preset("hull_white_vasicek")
    z = [mk.martingale_test(p, start_curve(), 5.0, 1.0, n, zero_drift=True).z_score for n in (1000, 10_000)]
    assert z[1] > z[0] > 5
