import math

import numpy as np
import pytest
from scipy.integrate import quad

from hjmaffine import curvealg as ca
from hjmaffine.curvealg import ExpPolyCurve, PiecewiseCurve, SpaceParams
from hjmaffine.realize import build
from hjmaffine.volspec import VolatilitySpec, constant_phi

E = ExpPolyCurve.exp
SPACE = SpaceParams(0.5, 1.5)


def vasicek_vol(rho=0.01, c=1.0) -> VolatilitySpec:
    return VolatilitySpec((E(-c, rho),), (constant_phi(1.0),), SPACE)


def start_curve() -> ExpPolyCurve:
    return ExpPolyCurve.constant(0.05) + E(-1.0, 0.01)


def ln2_start_curve() -> PiecewiseCurve:
    """Equal to ``start_curve`` beyond ``ln 2`` and bent by ``0.01 (x-b)^2 e^{-x}`` before it."""
    b = math.log(2.0)
    tail = start_curve()
    bump = E(-1.0, 0.01, 2) + E(-1.0, -0.02 * b, 1) + E(-1.0, 0.01 * b * b)
    return PiecewiseCurve([b], [tail + bump, tail])


def quad_norm(h, beta):
    """``sqrt(h(0)^2 + int h'^2 e^{beta x})`` by adaptive quadrature, independent of the closed form."""
    dh = h.derivative()
    horizon = ca._tail_horizon(h)
    f = lambda x: dh.eval(x) ** 2 * math.exp(beta * x)
    edges = np.linspace(0.0, horizon, 9)
    val = sum(quad(f, a, b, limit=400, epsabs=0.0, epsrel=1e-12)[0] for a, b in zip(edges, edges[1:]))
    return math.sqrt(h.eval(0.0) ** 2 + val)


@pytest.fixture(scope="session")
def h0():
    return start_curve()


@pytest.fixture(scope="session")
def vasicek():
    return vasicek_vol()


@pytest.fixture(scope="session")
def vasicek_real(vasicek, h0):
    return build(vasicek, h0, "shift")


@pytest.fixture(scope="session")
def vasicek_const(vasicek, h0):
    return build(vasicek, h0, "constant_vol")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance summary ---------------------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
