"""Simulation of realizations and of the HJMM equation on a maturity grid.

Brownian increments come from a counter-based generator: path ``i`` of seed
``s`` reads the Philox stream keyed by ``(s, i)`` and step ``k`` uses the
``k``-th 64-bit draw of that stream, mapped to a normal by the inverse CDF.
Every solver fed the same ``(seed, path)`` sees the same noise.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import expm
from scipy.special import ndtri

from .curvealg import Curve, ExpPolyCurve, combine
from .errors import CFLViolation, SchemeUnavailable
from .realize import AffineRealization
from .volspec import VolatilitySpec

SCHEMES = ("euler", "exact_linear")
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    n_steps: int = 1000
    seed: int = 0
    scheme: str = "euler"
    t0_offset: float = 0.0
    save_every: int = 10
    path_index: int = 0

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError("dt must be positive")
        if self.n_steps < 1:
            raise ValueError("n_steps must be at least 1")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.t0_offset < 0:
            raise ValueError("t0_offset must be non-negative")
        if self.save_every < 1:
            raise ValueError("save_every must be at least 1")

    @property
    def horizon(self) -> float:
        return self.dt * self.n_steps

    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    def saved_steps(self) -> np.ndarray:
        steps = np.arange(0, self.n_steps + 1, self.save_every)
        if steps[-1] != self.n_steps:
            steps = np.append(steps, self.n_steps)
        return steps


@dataclass(frozen=True)
class GridConfig:
    x_max: float = 10.0
    n_x: int = 1000
    boundary: str = "upwind_zero_slope"

    def __post_init__(self):
        if not self.x_max > 0:
            raise ValueError("x_max must be positive")
        if self.n_x < 16:
            raise ValueError("n_x must be at least 16")

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, self.x_max, self.n_x)

    @property
    def dx(self) -> float:
        return self.x_max / (self.n_x - 1)


# random numbers ------------------------------------------------------------------

def standard_normals(seed: int, path_index: int, n: int, stream: int = 0) -> np.ndarray:
    """First ``n`` normals of the stream keyed by ``(seed, path_index, stream)``."""
    key = np.array([seed & _MASK64, ((path_index & 0xFFFFFFFFFFFF) << 16 | (stream & 0xFFFF)) & _MASK64],
                   dtype=np.uint64)
    raw = np.random.Philox(key=key).random_raw(n)
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(u)


def brownian_increments(seed: int, n_steps: int, dt: float, n_paths: int = 1,
                        path_offset: int = 0, stream: int = 0) -> np.ndarray:
    """Scaled increments of shape ``(n_paths, n_steps)``."""
    out = np.empty((n_paths, n_steps))
    sq = math.sqrt(dt)
    for i in range(n_paths):
        out[i] = sq * standard_normals(seed, path_offset + i, n_steps, stream)
    return out


def coarsen(dW: np.ndarray, factor: int) -> np.ndarray:
    """Increments over ``factor`` consecutive steps (same Brownian path)."""
    dW = np.asarray(dW)
    n = dW.shape[-1]
    if n % factor:
        raise ValueError("number of steps must be divisible by the coarsening factor")
    return dW.reshape(dW.shape[:-1] + (n // factor, factor)).sum(axis=-1)


# paths ---------------------------------------------------------------------------

@dataclass
class SimPath:
    """Coordinate path with its reconstructed forward curves.

    ``Y`` and ``short_rate`` include the initial state, so they have
    ``n_steps + 1`` rows; ``curves`` are kept at ``saved_steps``.
    """

    times: np.ndarray
    Y: np.ndarray
    short_rate: np.ndarray
    saved_steps: np.ndarray
    curves: list
    W_increments: np.ndarray
    realization: AffineRealization
    t0: float = 0.0
    scheme: str = "euler"

    @property
    def saved_times(self) -> np.ndarray:
        return self.times[self.saved_steps]

    def curve_at(self, step: int) -> Curve:
        return self.realization.curve(self.t0 + self.times[step], self.Y[step])

    def curve_values(self, x: np.ndarray) -> np.ndarray:
        return np.array([c(x) for c in self.curves])

    def bond_prices(self, maturities: Sequence[float]) -> np.ndarray:
        """``P(t, T)`` for each step and each maturity date ``T`` (nan once ``t > T``)."""
        real = self.realization
        Lams = real.Lambdas
        out = np.full((self.times.size, len(maturities)), np.nan)
        for k, t in enumerate(self.times):
            prim = real.psi(self.t0 + t).antiderivative()
            for j, T in enumerate(maturities):
                tau = T - t
                if tau < -1e-12:
                    continue
                tau = max(tau, 0.0)
                logp = prim(tau) + sum(y * L(tau) for y, L in zip(self.Y[k], Lams))
                out[k, j] = math.exp(-logp)
        return out


@dataclass
class GridPath:
    times: np.ndarray
    x: np.ndarray
    values: np.ndarray
    W_increments: np.ndarray

    def curve_values(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.min() < self.x[0] - 1e-12 or x.max() > self.x[-1] + 1e-12:
            raise ValueError("requested maturities outside the solver grid")
        if x.shape == self.x.shape and np.allclose(x, self.x, rtol=0, atol=1e-14):
            return self.values
        return np.array([np.interp(x, self.x, v) for v in self.values])

    @property
    def saved_times(self) -> np.ndarray:
        return self.times


# coordinate SDE -------------------------------------------------------------------

def short_rate_anchor(real: AffineRealization, times: np.ndarray) -> np.ndarray:
    """``psi(t)(0)`` on a time grid."""
    if real.parametrization == "constant_vol" and real.drift_enabled:
        return (real.h0 + real._half_S2)(np.asarray(times))
    return np.asarray(real.h0(np.asarray(times)))


def _linear_coefficients(real: AffineRealization):
    """``(F, m, g)`` with ``mu = F y + m`` and constant ``gamma = g``; raises if not affine."""
    if not real.vol.constant_vol:
        raise SchemeUnavailable("exact_linear needs a y-independent diffusion and affine drift")
    m = real.constant_drift()
    _, g = real.mu_gamma(0.0, np.zeros(real.d))
    return real.A_matrix.T.copy(), m, g


def exact_linear_moments(real: AffineRealization, y0, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of ``Y_t`` for affine coordinate dynamics."""
    F, m, g = _linear_coefficients(real)
    d = real.d
    aug = np.zeros((d + 1, d + 1))
    aug[:d, :d] = F
    aug[:d, d] = m
    E = expm(aug * t)
    mean = E[:d, :d] @ np.asarray(y0, dtype=float) + E[:d, d]
    return mean, _van_loan(F, g, t)[1]


def _van_loan(F: np.ndarray, g: np.ndarray, h: float):
    d = F.shape[0]
    M = np.zeros((2 * d, 2 * d))
    M[:d, :d] = -F
    M[:d, d:] = np.outer(g, g)
    M[d:, d:] = F.T
    E = expm(M * h)
    Phi = E[d:, d:].T
    Q = Phi @ E[:d, d:]
    return Phi, 0.5 * (Q + Q.T)


def _exact_step_matrices(real: AffineRealization, dt: float):
    F, m, g = _linear_coefficients(real)
    d = real.d
    Phi, Q = _van_loan(F, g, dt)
    # integral of exp(F u) du applied column-wise
    blk = np.zeros((2 * d, 2 * d))
    blk[:d, :d] = F
    blk[:d, d:] = np.eye(d)
    Int = expm(blk * dt)[:d, d:]
    drift = Int @ m
    cross = Int @ g
    cond = Q - np.outer(cross, cross) / dt
    w, V = np.linalg.eigh(0.5 * (cond + cond.T))
    R = V * np.sqrt(np.clip(w, 0.0, None))
    return Phi, drift, cross, R


def simulate_coords(real: AffineRealization, y0=None, cfg: SimConfig = SimConfig(),
                    W_increments: np.ndarray | None = None) -> SimPath:
    """One coordinate path by Euler-Maruyama or by the exact Gaussian transition."""
    d = real.d
    y0 = np.zeros(d) if y0 is None else np.asarray(y0, dtype=float)
    if W_increments is None:
        W_increments = brownian_increments(cfg.seed, cfg.n_steps, cfg.dt, 1, cfg.path_index)[0]
    dW = np.asarray(W_increments, dtype=float)
    if dW.shape != (cfg.n_steps,):
        raise ValueError(f"need {cfg.n_steps} increments, got {dW.shape}")
    times = cfg.times()
    Y = np.empty((cfg.n_steps + 1, d))
    Y[0] = y0
    if cfg.scheme == "exact_linear":
        Phi, drift, cross, R = _exact_step_matrices(real, cfg.dt)
        xi = standard_normals(cfg.seed, cfg.path_index, cfg.n_steps * d, stream=1).reshape(cfg.n_steps, d)
        for k in range(cfg.n_steps):
            Y[k + 1] = Phi @ Y[k] + drift + cross * (dW[k] / cfg.dt) + R @ xi[k]
    else:
        needs_offsets = any(phi.functionals for phi in real.vol.functionals)
        offsets = real.offsets(0.0)
        for k in range(cfg.n_steps):
            if needs_offsets:
                offsets = real.offsets(cfg.t0_offset + times[k])
            gamma = real.gamma_from_offsets(offsets, Y[k][None, :])
            mu = real.mu_from_gamma(Y[k][None, :], gamma)
            Y[k + 1] = Y[k] + mu[0] * cfg.dt + gamma[0] * dW[k]
    lam0 = np.array([b(0.0) for b in real.basis])
    short = short_rate_anchor(real, cfg.t0_offset + times) + Y @ lam0
    steps = cfg.saved_steps()
    curves = [real.curve(cfg.t0_offset + times[k], Y[k]) for k in steps]
    return SimPath(times, Y, short, steps, curves, dW, real, cfg.t0_offset, cfg.scheme)


def euler_batch(real: AffineRealization, dW: np.ndarray, dt: float, y0=None, t0: float = 0.0,
                store_steps: Sequence[int] = ()) -> dict:
    """Euler paths for a batch of increments ``(n_paths, n_steps)``.

    Returns the terminal states, the trapezoid integral of the short rate and
    the states at ``store_steps``.
    """
    n, n_steps = dW.shape
    d = real.d
    Y = np.zeros((n, d)) if y0 is None else np.tile(np.asarray(y0, dtype=float), (n, 1))
    times = dt * np.arange(n_steps + 1)
    anchor = short_rate_anchor(real, t0 + times)
    lam0 = np.array([b(0.0) for b in real.basis])
    needs_offsets = any(phi.functionals for phi in real.vol.functionals)
    offsets = real.offsets(t0)
    r_prev = anchor[0] + Y @ lam0
    integral = np.zeros(n)
    stored = {}
    store = set(int(s) for s in store_steps)
    if 0 in store:
        stored[0] = Y.copy()
    for k in range(n_steps):
        if needs_offsets:
            offsets = real.offsets(t0 + times[k])
        gamma = real.gamma_from_offsets(offsets, Y)
        mu = real.mu_from_gamma(Y, gamma)
        Y = Y + mu * dt + gamma * dW[:, k : k + 1]
        r_next = anchor[k + 1] + Y @ lam0
        integral += 0.5 * dt * (r_prev + r_next)
        r_prev = r_next
        if k + 1 in store:
            stored[k + 1] = Y.copy()
    return {"Y": Y, "short_rate_integral": integral, "stored": stored}


# SPDE on a maturity grid ---------------------------------------------------------------

def _sigma_grid(vol: VolatilitySpec, x: np.ndarray, lam_grid: np.ndarray, r: np.ndarray) -> np.ndarray:
    out = np.zeros_like(r)
    for phi, lam in zip(vol.functionals, lam_grid):
        if phi.functionals:
            u = np.array([f.apply_grid(x, r) for f in phi.functionals]).reshape(-1, 1)
            val = float(phi.map.value(u)[0])
        else:
            val = float(phi.map.value(np.zeros((0, 1)))[0])
        out += val * lam
    return out


def _cumtrapz(f: np.ndarray, dx: float) -> np.ndarray:
    out = np.empty_like(f)
    out[0] = 0.0
    np.cumsum(0.5 * dx * (f[1:] + f[:-1]), out=out[1:])
    return out


def simulate_spde(vol: VolatilitySpec, h0: Curve, cfg: SimConfig, grid: GridConfig,
                  W_increments: np.ndarray, drift_enabled: bool = True) -> GridPath:
    """Explicit upwind scheme for ``dr = (r' + alpha(r)) dt + sigma(r) dW``.

    The transport term uses the forward difference toward larger maturity,
    the last node keeps zero slope, and ``alpha = sigma * cumtrapz(sigma)``.
    """
    dx = grid.dx
    if cfg.dt > dx * (1 + 1e-12):
        raise CFLViolation(f"dt={cfg.dt} exceeds grid spacing {dx}")
    dW = np.asarray(W_increments, dtype=float)
    if dW.shape != (cfg.n_steps,):
        raise ValueError(f"need {cfg.n_steps} increments, got {dW.shape}")
    x = grid.x
    lam_grid = np.array([lam(x) for lam in vol.directions])
    r = np.asarray(h0(x), dtype=float).copy()
    steps = cfg.saved_steps()
    save = set(int(s) for s in steps)
    out = [r.copy()] if 0 in save else []
    for k in range(cfg.n_steps):
        s = _sigma_grid(vol, x, lam_grid, r)
        transport = np.empty_like(r)
        transport[:-1] = (r[1:] - r[:-1]) / dx
        transport[-1] = 0.0
        drift = transport + (s * _cumtrapz(s, dx) if drift_enabled else 0.0)
        r = r + cfg.dt * drift + s * dW[k]
        if k + 1 in save:
            out.append(r.copy())
    return GridPath(cfg.times()[steps], x, np.array(out), dW)


# Gaussian oracle -------------------------------------------------------------------------

def gaussian_oracle(lam: ExpPolyCurve, h0: Curve, t: float, x_grid) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of ``r_t(x)`` for deterministic volatility ``lam``.

    ``mean(x) = h0(t+x) + A(t+x) - A(x)`` with ``A = Lambda**2 / 2`` the
    primitive of the drift ``lam * Lambda``, and
    ``cov(x, x') = int_0^t lam(u+x) lam(u+x') du``.
    """
    x_grid = np.asarray(x_grid, dtype=float)
    Lam = lam.antiderivative()
    half_sq = (Lam * Lam).scale(0.5)
    mean = np.asarray(h0(t + x_grid)) + half_sq(t + x_grid) - half_sq(x_grid)
    n = x_grid.size
    cov = np.zeros((n, n))
    shifted = [lam.shift(float(xi)) for xi in x_grid]
    for i in range(n):
        for j in range(i, n):
            cov[i, j] = cov[j, i] = (shifted[i] * shifted[j]).integral(t)
    return mean, cov


def realization_moments(real: AffineRealization, t: float, x_grid, y0=None) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of ``r_t`` on ``x_grid`` from the exact coordinate law."""
    y0 = np.zeros(real.d) if y0 is None else y0
    m, S = exact_linear_moments(real, y0, t)
    B = np.array([b(np.asarray(x_grid)) for b in real.basis]).T
    return np.asarray(real.psi(t)(np.asarray(x_grid))) + B @ m, B @ S @ B.T


# comparison -------------------------------------------------------------------------------

@dataclass
class PathComparison:
    times: np.ndarray
    sup_error: np.ndarray
    l2_error: np.ndarray
    rel_sup_error: np.ndarray

    @property
    def max_sup(self) -> float:
        return float(self.sup_error.max())

    @property
    def max_l2(self) -> float:
        return float(self.l2_error.max())

    @property
    def max_rel_sup(self) -> float:
        return float(self.rel_sup_error.max())

    def to_json(self) -> dict:
        return {"times": self.times.tolist(), "sup_error": self.sup_error.tolist(),
                "l2_error": self.l2_error.tolist(), "rel_sup_error": self.rel_sup_error.tolist(),
                "max_sup": self.max_sup, "max_l2": self.max_l2, "max_rel_sup": self.max_rel_sup}


def compare_paths(path_a, path_b, x_grid) -> PathComparison:
    """Per-time sup and L2 errors of ``path_a`` against ``path_b`` on ``x_grid``.

    The L2 error uses trapezoid weights on ``x_grid``; the relative sup error
    divides by ``sup |path_b|`` at each time.
    """
    ta, tb = np.asarray(path_a.saved_times), np.asarray(path_b.saved_times)
    if ta.shape != tb.shape or not np.allclose(ta, tb, rtol=0, atol=1e-12):
        raise ValueError("paths are saved on different time grids")
    x = np.asarray(x_grid, dtype=float)
    va, vb = path_a.curve_values(x), path_b.curve_values(x)
    if va.shape != vb.shape:
        raise ValueError("paths are evaluated on different maturity grids")
    diff = va - vb
    sup = np.max(np.abs(diff), axis=1)
    l2 = np.sqrt(np.trapezoid(diff**2, x, axis=1)) if x.size > 1 else np.abs(diff[:, 0])
    ref = np.max(np.abs(vb), axis=1)
    rel = sup / np.maximum(ref, 1e-300)
    return PathComparison(ta, sup, l2, rel)


# CSV output -----------------------------------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


def path_csv(path: SimPath, maturities: Sequence[float] = ()) -> str:
    """CSV with columns ``t, Y_1..Y_d, r0, P(t,T)...``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    d = path.Y.shape[1]
    w.writerow(["t", *[f"Y_{i + 1}" for i in range(d)], "r0", *[f"P_T{_fmt(T)}" for T in maturities]])
    prices = path.bond_prices(maturities) if len(maturities) else np.zeros((path.times.size, 0))
    for k, t in enumerate(path.times):
        w.writerow([_fmt(t), *[_fmt(v) for v in path.Y[k]], _fmt(path.short_rate[k]),
                    *[_fmt(v) for v in prices[k]]])
    return buf.getvalue()


def grid_csv(gp: GridPath) -> str:
    """Matrix CSV: header row ``t, x_0..x_n`` then one row per saved time."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", *[_fmt(v) for v in gp.x]])
    for t, row in zip(gp.times, gp.values):
        w.writerow([_fmt(t), *[_fmt(v) for v in row]])
    return buf.getvalue()
