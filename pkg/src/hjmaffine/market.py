"""Bond prices, the bank account, the short-rate catalog and martingale tests."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

from . import realize
from .curvealg import Curve, ExpPolyCurve, SpaceParams, membership
from .errors import UnsupportedPreset
from .realize import AffineRealization, StateTransform, build
from .simlab import SimPath, brownian_increments, euler_batch
from .volspec import Phi, PointEval, SmoothedSqrt, VolatilitySpec, constant_phi

PRESETS = ("ho_lee", "hull_white_vasicek", "hull_white_cir")


def bond_price(r: Curve, tau) -> float | np.ndarray:
    """``exp(-int_0^tau r)``."""
    tau_a = np.asarray(tau, dtype=float)
    if np.any(tau_a < 0):
        raise ValueError("time to maturity must be non-negative")
    return np.exp(-np.asarray(r.integral(tau_a))) if tau_a.ndim else math.exp(-float(r.integral(float(tau_a))))


def bank_account(path: SimPath) -> np.ndarray:
    """``exp(trapz(r(0)))`` at each step of the path."""
    r = np.asarray(path.short_rate)
    t = np.asarray(path.times)
    inc = 0.5 * np.diff(t) * (r[1:] + r[:-1])
    return np.exp(np.concatenate([[0.0], np.cumsum(inc)]))


# CIR direction ---------------------------------------------------------------------

@dataclass(frozen=True)
class CIRCurve:
    """Direction ``lambda = B'`` where ``B' + kappa B + (vol_sq/2) B**2 = 1``, ``B(0) = 0``.

    Evaluations use ``E = exp(-gamma x)`` so nothing overflows at long
    maturities: ``B = 2(1-E)/D`` with ``D = (gamma+kappa) + (gamma-kappa)E``.
    """

    kappa: float
    vol_sq: float

    def __post_init__(self):
        if self.kappa < 0 or not self.vol_sq > 0:
            raise ValueError("need kappa >= 0 and vol_sq > 0")

    @property
    def gamma_param(self) -> float:
        return math.sqrt(self.kappa**2 + 2.0 * self.vol_sq)

    def _ED(self, x):
        g = self.gamma_param
        E = np.exp(-g * np.asarray(x, dtype=float))
        return g, E, (g + self.kappa) + (g - self.kappa) * E

    def B(self, x):
        _, E, D = self._ED(x)
        return 2.0 * (1.0 - E) / D

    def __call__(self, x):
        g, E, D = self._ED(x)
        return 4.0 * g**2 * E / D**2

    def dlam(self, x):
        """``lambda' = B''``."""
        g, E, D = self._ED(x)
        return 4.0 * g**3 * E * ((g - self.kappa) * E - (g + self.kappa)) / D**3

    def integral(self, x):
        return self.B(x)

    def in_H0(self, beta_prime: float) -> bool:
        return -2.0 * self.gamma_param + beta_prime < 0

    def riccati_residual(self, x) -> np.ndarray:
        b = self.B(x)
        return np.abs(self(x) + self.kappa * b + 0.5 * self.vol_sq * b**2 - 1.0)

    def numeric_B(self, x) -> np.ndarray:
        """Cross-check: integrate the Riccati equation numerically."""
        x = np.asarray(x, dtype=float)
        sol = solve_ivp(lambda _, b: 1.0 - self.kappa * b - 0.5 * self.vol_sq * b**2,
                        (0.0, float(x.max())), [0.0], t_eval=x, rtol=1e-12, atol=1e-14, method="DOP853")
        return sol.y[0]

    def to_json(self) -> dict:
        return {"kind": "cir", "kappa": self.kappa, "vol_sq": self.vol_sq}


# presets ------------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelPreset:
    name: str
    params: dict
    space: SpaceParams = field(default_factory=SpaceParams)

    def __post_init__(self):
        if self.name not in PRESETS:
            raise UnsupportedPreset(f"unknown preset {self.name!r}; choose from {PRESETS}")
        if self.name == "hull_white_vasicek":
            c = self.params["c"]
            if not c > 0 or -2.0 * c + self.space.beta_prime >= 0:
                raise ValueError("Vasicek preset needs c > 0 and beta_prime < 2c")

    def vol_spec(self) -> VolatilitySpec:
        p = self.params
        if self.name == "ho_lee":
            return VolatilitySpec((ExpPolyCurve.constant(p["rho"]),), (constant_phi(1.0),),
                                  self.space, strict=False)
        if self.name == "hull_white_vasicek":
            return VolatilitySpec((ExpPolyCurve.exp(-p["c"], p["rho"]),), (constant_phi(1.0),), self.space)
        lam = CIRCurve(p["kappa"], p["vol_sq"])
        phi = Phi(SmoothedSqrt(p["c"], (p["vol_sq"],), p["eps"]), (PointEval(0.0),))
        return VolatilitySpec((lam,), (phi,), self.space, strict=False)

    @property
    def membership_warning(self) -> bool:
        return self.vol_spec().membership_warning

    def realization(self, h0: Curve) -> AffineRealization:
        """Finite-dimensional realization used for simulation."""
        if self.name == "hull_white_vasicek":
            return build(self.vol_spec(), h0, "shift")
        if self.name == "ho_lee":
            return build(self.vol_spec(), h0, "constant_vol")
        raise UnsupportedPreset("the CIR preset has no exp-poly realization; use short_rate_realization")


DEFAULTS = {
    "ho_lee": {"rho": 0.01},
    "hull_white_vasicek": {"rho": 0.01, "c": 1.0},
    "hull_white_cir": {"kappa": 0.1, "vol_sq": 0.08, "c": 0.0, "eps": 1e-6},
}


def preset(name: str, space: SpaceParams | None = None, **params) -> ModelPreset:
    if name not in DEFAULTS:
        raise UnsupportedPreset(f"unknown preset {name!r}; choose from {PRESETS}")
    unknown = set(params) - set(DEFAULTS[name])
    if unknown:
        raise ValueError(f"unknown parameters for {name}: {sorted(unknown)}")
    return ModelPreset(name, {**DEFAULTS[name], **params}, space or SpaceParams())


# short-rate realizations ----------------------------------------------------------------

@dataclass
class ShortRateModel:
    """One-dimensional realization with state ``r_t(0)``: ``dr = (theta - kappa r) dt + diffusion dW``."""

    name: str
    kappa: float
    theta: Callable[[np.ndarray], np.ndarray]
    diffusion: Callable[[float, np.ndarray], np.ndarray]
    dimension: int = 1
    membership_warning: bool = False
    L: np.ndarray | None = None
    riccati_residual: float = 0.0
    riccati_coefficients: dict = field(default_factory=dict)
    source: object = None


def short_rate_realization(p: ModelPreset, h0: Curve, horizon: float = 10.0, dt: float = 1e-3) -> ShortRateModel:
    """Scalar short-rate SDE equivalent to the preset's HJMM dynamics."""
    if p.name in ("ho_lee", "hull_white_vasicek"):
        real = build(p.vol_spec(), h0, "constant_vol")
        tr = StateTransform(real, [PointEval(0.0)])
        kappa = -float(real.A_matrix[0, 0])
        L = tr.L
        m = real.constant_drift()
        sig = float((L @ real.mu_gamma(0.0, np.zeros(1))[1])[0])

        def theta(t):
            t = np.atleast_1d(np.asarray(t, dtype=float))
            return np.array([tr.anchor_rate(s)[0] + kappa * tr.anchor(s)[0] + float((L @ m)[0]) for s in t])

        rr = realize.riccati_check(real)
        return ShortRateModel(p.name, kappa, theta, lambda t, r: np.full_like(np.asarray(r, float), sig),
                              1, p.membership_warning, L, rr.check("riccati_residual").residual,
                              {"a": rr.extras["a"], "max_abs_b": rr.extras["max_abs_b"]}, real)
    if p.name == "hull_white_cir":
        model = CIRShortRate(p, h0, horizon, dt)
        return ShortRateModel(p.name, model.kappa, model.theta, model.diffusion, 1, p.membership_warning,
                              np.array([[1.0]]), model.riccati_residual(),
                              {"a": model.kappa, "b": 0.5 * model.vol_sq}, model)
    raise UnsupportedPreset(f"no short-rate realization for {p.name!r}")


class CIRShortRate:
    """Realization ``r_t = psi(t) + Y_t lambda`` for ``sigma(h) = sqrt(c + v h(0)) lambda``.

    With ``k0 = c / v`` the leaf anchor solves
    ``d/dt psi = d/dx psi - (k0 + phi(t)) lambda'`` where ``phi(t) = psi(t)(0)``,
    so ``phi`` satisfies the linear Volterra equation
    ``phi(t) = h0(t) - int_0^t (k0 + phi(s)) lambda'(t - s) ds``, solved by the
    trapezoid rule on the simulation grid.  The state then follows
    ``dY = -kappa (k0 + phi + Y) dt + sqrt(max(c + v (phi + Y), eps)) dW``.
    """

    def __init__(self, p: ModelPreset, h0: Curve, horizon: float, dt: float):
        self.preset = p
        self.h0 = h0
        self.lam = CIRCurve(p.params["kappa"], p.params["vol_sq"])
        self.kappa = self.lam.kappa
        self.vol_sq = self.lam.vol_sq
        self.c = p.params["c"]
        self.eps = p.params["eps"]
        self.k0 = self.c / self.vol_sq
        self.dt = dt
        n = int(round(horizon / dt))
        self.times = dt * np.arange(n + 1)
        self.phi = self._solve_anchor()
        self.H0 = h0.antiderivative()

    def _solve_anchor(self) -> np.ndarray:
        t, dt = self.times, self.dt
        kern = self.lam.dlam(t)
        h = np.asarray(self.h0(t))
        phi = np.empty_like(t)
        g = np.empty_like(t)  # k0 + phi
        phi[0] = h[0]
        g[0] = self.k0 + phi[0]
        denom = 1.0 + 0.5 * dt * kern[0]
        for n in range(1, t.size):
            # trapezoid over s_j, j = 0..n; kernel argument t_n - s_j = t_{n-j}
            acc = 0.5 * g[0] * kern[n] + np.dot(g[1:n], kern[n - 1 : 0 : -1])
            phi[n] = (h[n] - dt * (acc + 0.5 * self.k0 * kern[0])) / denom
            g[n] = self.k0 + phi[n]
        return phi

    def index(self, t: float) -> int:
        k = int(round(t / self.dt))
        if abs(k * self.dt - t) > 1e-9 or k >= self.times.size:
            raise ValueError("time is not on the anchor grid")
        return k

    def theta(self, t) -> np.ndarray:
        dphi = np.gradient(self.phi, self.times)
        return np.interp(np.asarray(t, dtype=float), self.times, dphi) - self.kappa * self.k0

    def diffusion(self, t, r) -> np.ndarray:
        return np.sqrt(np.maximum(self.c + self.vol_sq * np.asarray(r, dtype=float), self.eps))

    def log_anchor_bond(self, k: int, tau: float) -> float:
        """``int_0^tau psi(t_k)(x) dx``."""
        t = self.times[k]
        s = self.times[: k + 1]
        f = (self.k0 + self.phi[: k + 1]) * (self.lam(t - s + tau) - self.lam(t - s))
        conv = np.trapezoid(f, s) if k > 0 else 0.0
        return float(self.H0(t + tau) - self.H0(t) - conv)

    def riccati_residual(self, x_max: float = 50.0) -> float:
        return float(np.max(self.lam.riccati_residual(np.linspace(0.0, x_max, 5001))))

    def invariance_residuals(self, n_samples: int = 100, seed: int = 0, x_max: float = 30.0) -> np.ndarray:
        """Sup over maturities of ``nu(r) - d/dt psi - mu lambda`` at sampled short rates.

        Samples keep ``c + v r(0)`` above the floor, where the squared
        volatility is affine and the one-dimensional leaf is exact.
        """
        rng = np.random.default_rng(seed)
        x = np.linspace(0.0, x_max, 601)
        lam, dlam, B = self.lam(x), self.lam.dlam(x), self.lam.B(x)
        lo = (self.eps - self.c) / self.vol_sq
        out = []
        for _ in range(n_samples):
            R = max(lo, 0.0) + rng.uniform(1e-4, 0.2)
            alpha = (self.c + self.vol_sq * R) * lam * B
            mu = -self.kappa * (self.k0 + R)
            resid = (self.k0 + R) * dlam + alpha - mu * lam
            out.append(float(np.max(np.abs(resid))))
        return np.array(out)

    def euler_batch(self, dW: np.ndarray, zero_drift: bool = False) -> dict:
        n, n_steps = dW.shape
        if n_steps >= self.times.size:
            raise ValueError("anchor grid is shorter than the simulation")
        Y = np.zeros(n)
        r_prev = self.phi[0] + Y
        integral = np.zeros(n)
        for k in range(n_steps):
            R = self.phi[k] + Y
            mu = -self.kappa * (self.k0 + R)
            Y = Y + mu * self.dt + self.diffusion(0.0, R) * dW[:, k]
            r_next = self.phi[k + 1] + Y
            integral += 0.5 * self.dt * (r_prev + r_next)
            r_prev = r_next
        return {"Y": Y, "short_rate_integral": integral}


# martingale test ---------------------------------------------------------------------------

@dataclass
class MartingaleReport:
    preset: str
    maturity: float
    t: float
    n_paths: int
    estimate: float
    target: float
    standard_error: float
    z_score: float
    antithetic: bool
    zero_drift: bool
    seed: int
    dt: float

    def to_json(self) -> dict:
        return dict(self.__dict__)

    def csv_line(self) -> str:
        keys = ["preset", "maturity", "t", "n_paths", "estimate", "target", "standard_error",
                "z_score", "antithetic", "zero_drift", "seed", "dt"]
        return ",".join(repr(v) if isinstance(v, float) else str(v) for v in (getattr(self, k) for k in keys))

    @staticmethod
    def csv_header() -> str:
        return "preset,maturity,t,n_paths,estimate,target,standard_error,z_score,antithetic,zero_drift,seed,dt"


def _z(mean: float, target: float, se: float) -> float:
    if se > 0:
        return abs(mean - target) / se
    return 0.0 if abs(mean - target) <= 1e-14 * max(1.0, abs(target)) else math.inf


def martingale_test(p: ModelPreset | AffineRealization, h0: Curve, T: float, t: float = 1.0,
                    n_paths: int = 10_000, dt: float = 1e-3, seed: int = 0, zero_drift: bool = False,
                    antithetic: bool = True, batch_size: int = 5000) -> MartingaleReport:
    """Monte Carlo estimate of ``E[P(t,T) / B(t)]`` against ``P(0,T)``.

    With ``antithetic=True`` each Brownian path is paired with its negative
    and the standard error is computed from the pair averages, so the paths
    in a pair are never treated as independent.  ``zero_drift`` removes the
    HJM drift (an arbitrage-admitting control).
    """
    if not T > t > 0:
        raise ValueError("need T > t > 0")
    n_steps = int(round(t / dt))
    if abs(n_steps * dt - t) > 1e-9:
        raise ValueError("t must be a multiple of dt")
    if antithetic and n_paths % 2:
        raise ValueError("antithetic sampling needs an even number of paths")
    tau = T - t
    target = float(bond_price(h0, T))
    name = p.name if isinstance(p, ModelPreset) else "realization"

    if isinstance(p, ModelPreset) and p.name == "hull_white_cir":
        if zero_drift:
            raise UnsupportedPreset("the CIR realization has no drift-free counterpart")
        model = CIRShortRate(p, h0, t + dt, dt)

        def run(dW):
            out = model.euler_batch(dW)
            logp = model.log_anchor_bond(n_steps, tau) + out["Y"] * model.lam.B(tau)
            return np.exp(-logp - out["short_rate_integral"])
    else:
        real = p if isinstance(p, AffineRealization) else p.realization(h0)
        if zero_drift:
            real = real.without_drift()
        prim = real.psi(t).antiderivative()(tau)
        Lt = np.array([L(tau) for L in real.Lambdas])

        def run(dW):
            out = euler_batch(real, dW, dt)
            logp = prim + out["Y"] @ Lt
            return np.exp(-logp - out["short_rate_integral"])

    n_streams = n_paths // 2 if antithetic else n_paths
    samples = []
    per = batch_size // 2 if antithetic else batch_size
    for start in range(0, n_streams, per):
        m = min(per, n_streams - start)
        dW = brownian_increments(seed, n_steps, dt, m, path_offset=start)
        if antithetic:
            samples.append(0.5 * (run(dW) + run(-dW)))
        else:
            samples.append(run(dW))
    x = np.concatenate(samples)
    mean = float(x.mean())
    se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0
    return MartingaleReport(name, T, t, n_paths, mean, target, se, _z(mean, target, se),
                            antithetic, zero_drift, seed, dt)
