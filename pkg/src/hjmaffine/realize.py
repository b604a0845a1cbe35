"""Construction and verification of affine finite-dimensional realizations.

Given quasi-exponential directions, the forward curve evolves on the moving
affine leaves ``psi(t) + V`` and is carried by a d-dimensional coordinate
process ``Y`` with

    dY = mu(t, Y) dt + gamma(t, Y) dW,    r_t = psi(t) + sum_i Y_i lambda_i.

Two parametrizations are available.  ``"shift"`` uses ``psi(t) = S_t h0`` and
a subspace V closed under d/dx that also contains the products
``lambda_i Lambda_j``.  ``"constant_vol"`` (deterministic volatility only)
moves the drift into ``psi`` so that V reduces to the sum of Krylov spaces.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from . import volspec
from .curvealg import (
    Curve,
    ExpPolyCurve,
    PiecewiseCurve,
    coef_layout,
    coef_vector,
    combine,
    coords,
    curve_from_json,
    distance_to_span,
    membership,
    norm_beta,
    project,
    rank,
    residual_size,
)
from .errors import (
    BasisSelectionFailure,
    DependentDirections,
    DomainViolation,
    Inconclusive,
    NotInSpan,
    SingularTransform,
)
from .volspec import LinearFunctional, VolatilitySpec, functional_from_json

PARAMETRIZATIONS = ("shift", "constant_vol")


# Krylov spaces -------------------------------------------------------------------

@dataclass(frozen=True)
class KrylovSpace:
    seed: ExpPolyCurve
    basis: tuple[ExpPolyCurve, ...]

    @property
    def dimension(self) -> int:
        return len(self.basis)

    @property
    def formula_dimension(self) -> int:
        """Sum over distinct rates of (polynomial degree + 1)."""
        return sum(c.size for _, c in self.seed.terms)


def krylov(lam: ExpPolyCurve) -> KrylovSpace:
    """Span of ``lam, lam', lam'', ...`` in derivative order."""
    if lam.is_zero():
        raise ValueError("Krylov space of the zero curve")
    basis = [lam]
    cur = lam
    for _ in range(sum(c.size for _, c in lam.terms) + 1):
        nxt = cur.derivative()
        if nxt.is_zero() or rank([*basis, nxt]) == len(basis):
            break
        basis.append(nxt)
        cur = nxt
    return KrylovSpace(lam, tuple(basis))


def _append_independent(basis: list[ExpPolyCurve], cand: ExpPolyCurve) -> bool:
    if cand.is_zero() or rank([*basis, cand]) == len(basis):
        return False
    basis.append(cand)
    return True


# the realization ------------------------------------------------------------------

class AffineRealization:
    """Affine realization ``r_t = psi(t) + sum_i Y_i lambda_i`` of the HJMM equation.

    Attributes
    ----------
    vol : VolatilitySpec
    h0 : initial curve
    basis : basis ``lambda_1..lambda_d`` of V; the first ``p`` are the directions
    A_matrix : ``(d, d)`` with ``lambda_i' = sum_j A[i, j] lambda_j``
    C_matrix : ``(d, p, p)``, column ``C[:, k, l]`` holds the coordinates of
        ``lambda_k Lambda_l``
    q : dimension of the sum of Krylov spaces
    parametrization : ``"shift"`` or ``"constant_vol"``
    drift_enabled : when False the HJM drift is dropped everywhere, which
        realizes the arbitrage-admitting equation ``dr = r' dt + sigma dW``
    """

    def __init__(self, vol: VolatilitySpec, h0: Curve, basis: Sequence[ExpPolyCurve],
                 A_matrix, C_matrix, q: int, parametrization: str = "shift",
                 drift_enabled: bool = True):
        if parametrization not in PARAMETRIZATIONS:
            raise ValueError(f"unknown parametrization {parametrization!r}")
        self.vol = vol
        self.h0 = h0
        self.basis = tuple(basis)
        self.A_matrix = np.array(A_matrix, dtype=float)
        self.C_matrix = np.array(C_matrix, dtype=float).reshape(self.d, vol.p, vol.p)
        self.q = int(q)
        self.parametrization = parametrization
        self.drift_enabled = bool(drift_enabled)
        self.Lambdas = tuple(b.antiderivative() for b in self.basis)
        self._const_sigma = None
        if parametrization == "constant_vol":
            if not vol.constant_vol:
                raise ValueError("constant_vol parametrization needs deterministic volatility")
            s = combine([phi(ExpPolyCurve()) for phi in vol.functionals], vol.directions)
            self._const_sigma = s
            self._half_S2 = (s.antiderivative() * s.antiderivative()).scale(0.5)
        # linear layer of each functional on V, for vectorised evaluation
        self._F = []
        for phi in vol.functionals:
            F = np.array([[f.apply(b) for b in self.basis] for f in phi.functionals]).reshape(-1, self.d)
            self._F.append(F)

    # sizes
    @property
    def d(self) -> int:
        return len(self.basis)

    @property
    def p(self) -> int:
        return self.vol.p

    # leaves
    def psi(self, t: float) -> Curve:
        if t < 0:
            raise ValueError("time must be non-negative")
        if self.parametrization == "constant_vol" and self.drift_enabled:
            return (self.h0 + self._half_S2).shift(t) - self._half_S2
        return self.h0.shift(t)

    def dpsi_dt(self, t: float) -> Curve:
        if self.parametrization == "constant_vol" and self.drift_enabled:
            return (self.h0 + self._half_S2).shift(t).derivative()
        return self.h0.shift(t).derivative()

    def curve(self, t: float, y) -> Curve:
        return self.psi(t) + combine(np.asarray(y, dtype=float), self.basis)

    def offsets(self, t: float, psi: Curve | None = None) -> list[np.ndarray]:
        """Linear-functional values ``l_ij(psi(t))`` for each ``Phi_i``."""
        psi = self.psi(t) if psi is None else psi
        return [np.array([f.apply(psi) for f in phi.functionals]) for phi in self.vol.functionals]

    def gamma_from_offsets(self, offsets: list[np.ndarray], y: np.ndarray) -> np.ndarray:
        """Diffusion coefficients for states ``y`` of shape ``(n, d)``; returns ``(n, d)``."""
        y = np.atleast_2d(y)
        out = np.zeros_like(y, dtype=float)
        for i, (phi, F, u0) in enumerate(zip(self.vol.functionals, self._F, offsets)):
            u = u0[:, None] + F @ y.T
            out[:, i] = phi.map.value(u)
        return out

    def mu_from_gamma(self, y: np.ndarray, gamma: np.ndarray) -> np.ndarray:
        y = np.atleast_2d(y)
        mu = y @ self.A_matrix
        if self.drift_enabled and self.parametrization == "shift":
            g = gamma[:, : self.p]
            mu = mu + np.einsum("ikl,nk,nl->ni", self.C_matrix, g, g)
        return mu

    def mu_gamma(self, t: float, y) -> tuple[np.ndarray, np.ndarray]:
        """Coordinate drift and diffusion at ``(t, y)``; ``y`` may be a batch ``(n, d)``."""
        y = np.asarray(y, dtype=float)
        single = y.ndim == 1
        gamma = self.gamma_from_offsets(self.offsets(t), y)
        mu = self.mu_from_gamma(y, gamma)
        if single:
            return mu[0], gamma[0]
        return mu, gamma

    def constant_drift(self) -> np.ndarray | None:
        """``mu(t, 0)`` when the coefficients are affine with constant gamma, else None."""
        if not self.vol.constant_vol:
            return None
        _, g = self.mu_gamma(0.0, np.zeros(self.d))
        return self.mu_from_gamma(np.zeros((1, self.d)), g[None, :])[0]

    def without_drift(self) -> "AffineRealization":
        return AffineRealization(self.vol, self.h0, self.basis, self.A_matrix, self.C_matrix,
                                 self.q, self.parametrization, drift_enabled=False)

    def with_A(self, A) -> "AffineRealization":
        return AffineRealization(self.vol, self.h0, self.basis, A, self.C_matrix, self.q,
                                 self.parametrization, self.drift_enabled)

    # serialization
    def to_json(self) -> dict:
        return {
            "parametrization": self.parametrization,
            "drift_enabled": self.drift_enabled,
            "p": self.p,
            "q": self.q,
            "d": self.d,
            "basis": [b.to_json() for b in self.basis],
            "A_matrix": self.A_matrix.tolist(),
            "C_matrix": self.C_matrix.tolist(),
            "vol": self.vol.to_json(),
            "h0": self.h0.to_json(),
        }

    @classmethod
    def from_json(cls, data: dict) -> "AffineRealization":
        vol = VolatilitySpec.from_json(data["vol"])
        return cls(vol, curve_from_json(data["h0"]),
                   [ExpPolyCurve.from_json(b) for b in data["basis"]],
                   data["A_matrix"], data["C_matrix"], data["q"],
                   data.get("parametrization", "shift"), data.get("drift_enabled", True))

    def __repr__(self):
        return (f"AffineRealization(d={self.d}, p={self.p}, q={self.q}, "
                f"parametrization={self.parametrization!r})")


def _check_start(vol: VolatilitySpec, h0: Curve):
    beta = vol.space.beta
    if not membership(h0, beta).in_H_beta:
        raise DomainViolation("initial curve is not in H_beta")
    if not membership(h0.derivative(), beta).in_H_beta:
        raise DomainViolation("initial curve is not in the domain of d/dx")


def build(vol: VolatilitySpec, h0: Curve, parametrization: str = "shift") -> AffineRealization:
    """Construct V, the shift matrix and the product coordinates.

    Basis order: the directions, then Krylov completions of each direction,
    then (shift parametrization only) the independent products
    ``lambda_i Lambda_j`` for ``i, j <= q`` in lexicographic order.
    """
    if parametrization not in PARAMETRIZATIONS:
        raise ValueError(f"unknown parametrization {parametrization!r}")
    if vol.strict:
        _check_start(vol, h0)
    directions = list(vol.directions)
    if not all(isinstance(lam, ExpPolyCurve) for lam in directions):
        raise TypeError("build needs exp-poly directions")
    p = len(directions)
    if rank(directions) < p:
        raise DependentDirections("volatility directions are linearly dependent")
    basis = list(directions)
    for lam in directions:
        for b in krylov(lam).basis[1:]:
            _append_independent(basis, b)
    q = len(basis)
    if parametrization == "shift":
        Lams = [b.antiderivative() for b in basis[:q]]
        for i in range(q):
            for j in range(q):
                _append_independent(basis, basis[i] * Lams[j])
    d = len(basis)
    A = np.zeros((d, d))
    for i, b in enumerate(basis):
        A[i] = coords(b.derivative(), basis) if not b.derivative().is_zero() else 0.0
    C = np.zeros((d, p, p))
    if parametrization == "shift":
        for k in range(p):
            for l in range(p):
                C[:, k, l] = coords(basis[k] * basis[l].antiderivative(), basis)
    return AffineRealization(vol, h0, basis, A, C, q, parametrization)


# verification reports ---------------------------------------------------------------

@dataclass
class Check:
    name: str
    residual: float
    tolerance: float
    values: list[float] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.residual) and self.residual <= self.tolerance)

    def to_json(self) -> dict:
        return {"name": self.name, "residual": float(self.residual), "tolerance": self.tolerance,
                "passed": self.passed, "values": [float(v) for v in self.values]}


@dataclass
class VerificationReport:
    kind: str
    checks: list[Check]
    extras: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str) -> Check:
        return next(c for c in self.checks if c.name == name)

    def to_json(self) -> dict:
        return {"kind": self.kind, "passed": self.passed,
                "checks": [c.to_json() for c in self.checks], "extras": _jsonable(self.extras)}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=2)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def _samples(real: AffineRealization, n: int, seed: int, t_max: float, y_scale: float):
    rng = np.random.default_rng(seed)
    ts = rng.uniform(0.0, t_max, n)
    ys = rng.normal(0.0, y_scale, (n, real.d))
    return ts, ys


def _gap(a, b) -> float:
    diff = np.abs(np.asarray(a) - np.asarray(b))
    return float(diff.max()) if diff.size else 0.0


def check_invariance(real: AffineRealization, n_samples: int = 100, seed: int = 0,
                     t_max: float = 10.0, y_scale: float = 1.0, tol: float = 1e-9) -> VerificationReport:
    """Tangency of drift and volatility to the leaves at sampled ``(t, y)``.

    The drift residual is the H_beta size of
    ``nu(r) - dpsi/dt - sum mu_i lambda_i`` at ``r = psi(t) + sum y_i lambda_i``,
    plus the coordinate gap between the fitted and reported ``mu``; the
    volatility residual is the same for ``sigma(r)`` against ``gamma``.
    """
    beta = real.vol.space.beta
    ts, ys = _samples(real, n_samples, seed, t_max, y_scale)
    res_nu, res_sigma = [], []
    spec = real.vol
    for t, y in zip(ts, ys):
        r = real.curve(t, y)
        mu, gamma = real.mu_gamma(t, y)
        try:
            lhs = (volspec.nu(spec, r) if real.drift_enabled else r.derivative()) - real.dpsi_dt(t)
            c, resid = project(lhs, real.basis)
            res_nu.append(max(_gap(c, mu), residual_size(resid, beta)))
        except (NotInSpan, DomainViolation, ValueError):
            res_nu.append(math.inf)
        s = volspec.sigma(spec, r)
        c, resid = project(s, real.basis)
        res_sigma.append(max(_gap(c, gamma), residual_size(resid, beta)))
    checks = [
        Check("drift_tangency", max(res_nu), tol, res_nu),
        Check("volatility_tangency", max(res_sigma), tol, res_sigma),
    ]
    return VerificationReport("invariance", checks,
                              {"n_samples": n_samples, "seed": seed, "t_max": t_max, "y_scale": y_scale})


def riccati_check(real: AffineRealization, n_samples: int = 50, seed: int = 1, t_max: float = 10.0,
                  y_scale: float = 1.0, fd_step: float = 1e-5, spread_tol: float = 1e-6,
                  residual_tol: float = 1e-8, x_max: float = 30.0) -> VerificationReport:
    """Constancy of the Riccati coefficients and the Riccati residual per coordinate.

    Partial derivatives in ``y`` are central finite differences so the check
    does not rely on the analytic derivatives of the functionals.
    """
    d = real.d
    Lams = real.Lambdas
    ts, ys = _samples(real, n_samples, seed, t_max, y_scale)
    gammas = np.array([real.mu_gamma(t, y)[1] for t, y in zip(ts, ys)])
    E1 = [i for i in range(d) if np.max(np.abs(gammas[:, i])) > 1e-12]
    E2 = [(i, j) for i in E1 for j in E1 if i < j]

    # greedy completion of {Lambda_1..Lambda_d} by squares and mixed products
    chosen = list(Lams)
    D1 = [i for i in E1 if _append_independent(chosen, Lams[i] * Lams[i])]
    D2 = [(i, j) for i, j in E2 if _append_independent(chosen, Lams[i] * Lams[j])]
    sq = {}
    for m in E1:
        if m not in D1:
            try:
                sq[m] = coords(Lams[m] * Lams[m], chosen)
            except NotInSpan as exc:
                raise BasisSelectionFailure(f"square of Lambda_{m} outside the selected basis") from exc
    mixed = {}
    for mn in E2:
        if mn not in D2:
            m, n = mn
            try:
                mixed[mn] = coords(Lams[m] * Lams[n], chosen)
            except NotInSpan as exc:
                raise BasisSelectionFailure(f"product Lambda_{m} Lambda_{n} outside the basis") from exc
    n_rows = d + len(D1) + len(D2)

    def lhs(t, ys_):
        """Rows: f_i (i<d), g_i (i in D1), g_ij (ij in D2); shape (n, n_rows)."""
        mu, gam = real.mu_gamma(t, ys_)
        out = np.zeros((ys_.shape[0], n_rows))
        out[:, :d] = -mu
        for row, i in enumerate(D1):
            out[:, d + row] += 0.5 * gam[:, i] ** 2
        for row, (i, j) in enumerate(D2):
            out[:, d + len(D1) + row] += gam[:, i] * gam[:, j]
        for m, c in sq.items():
            out += 0.5 * np.outer(gam[:, m] ** 2, c)
        for (m, n), c in mixed.items():
            out += np.outer(gam[:, m] * gam[:, n], c)
        return out

    coef = np.zeros((n_samples, n_rows, d))
    for s, (t, y) in enumerate(zip(ts, ys) if d else ()):
        pts = np.vstack([y + fd_step * e for e in np.eye(d)] + [y - fd_step * e for e in np.eye(d)])
        vals = lhs(t, pts)
        coef[s] = ((vals[:d] - vals[d:]) / (2 * fd_step)).T
    spread = coef.max(axis=0) - coef.min(axis=0)
    mean = coef.mean(axis=0)
    a = mean[:d]
    b1 = mean[d : d + len(D1)]
    b2 = mean[d + len(D1) :]

    xs = np.linspace(0.0, x_max, 3001)
    residuals = []
    lam_vals = [b(xs) for b in real.basis]
    Lam_vals = [L(xs) for L in Lams]
    for k in range(d):
        R = lam_vals[k] - real.basis[k](0.0)
        for i in range(d):
            R = R + a[i, k] * Lam_vals[i]
        for row, i in enumerate(D1):
            R = R + b1[row, k] * Lam_vals[i] ** 2
        for row, (i, j) in enumerate(D2):
            R = R + b2[row, k] * Lam_vals[i] * Lam_vals[j]
        residuals.append(float(np.max(np.abs(R))))
    quad = np.concatenate([b1.ravel(), b2.ravel()])
    checks = [
        Check("coefficient_spread", float(spread.max()) if spread.size else 0.0, spread_tol,
              spread.max(axis=0).tolist() if spread.size else []),
        Check("riccati_residual", max(residuals, default=0.0), residual_tol, residuals),
    ]
    extras = {
        "E1": E1, "E2": E2, "D1": D1, "D2": D2,
        "a": a, "b_square": b1, "b_mixed": b2,
        "max_abs_b": float(np.max(np.abs(quad))) if quad.size else 0.0,
        "c_square": {m: c[:d] for m, c in sq.items()},
        "c_mixed": {f"{m},{n}": c[:d] for (m, n), c in mixed.items()},
        "n_samples": n_samples, "seed": seed, "fd_step": fd_step,
    }
    return VerificationReport("riccati", checks, extras)


# singular set and entry time ------------------------------------------------------

@dataclass(frozen=True)
class SingularSet:
    """``offset + span(span_basis)``."""

    offset: ExpPolyCurve
    span_basis: tuple[ExpPolyCurve, ...]

    @property
    def dimension(self) -> int:
        return len(self.span_basis)


def singular_set(real: AffineRealization) -> SingularSet:
    span = (ExpPolyCurve.constant(1.0),) + tuple(real.Lambdas)
    if real.parametrization == "constant_vol" and real.drift_enabled:
        return SingularSet(-real._half_S2, span)
    return SingularSet(ExpPolyCurve(), span)


def singular_residuals(real: AffineRealization, h: Curve) -> tuple[float, float]:
    """Distance of ``h`` to the singular set and of ``nu(h)`` to V (both H_beta)."""
    beta = real.vol.space.beta
    S = singular_set(real)
    d_sigma = distance_to_span(h - S.offset, S.span_basis, beta)
    dh = h.derivative()
    if not membership(dh, beta).in_H_beta:
        raise DomainViolation("curve is not in the domain of d/dx")
    drift = volspec.nu(real.vol, h) if real.drift_enabled else dh
    if isinstance(drift, PiecewiseCurve):
        d_nu = distance_to_span(drift, real.basis, beta)
    else:
        _, r = project(drift, real.basis)
        d_nu = residual_size(r, beta)
    return d_sigma, d_nu


def in_singular(real: AffineRealization, h: Curve, tol: float = 1e-9) -> bool:
    d_sigma, _ = singular_residuals(real, h)
    scale = max(1.0, norm_beta(h, real.vol.space.beta))
    return d_sigma <= tol * scale


def distance_to_singular(real: AffineRealization, h: Curve) -> float:
    S = singular_set(real)
    return distance_to_span(h - S.offset, S.span_basis, real.vol.space.beta)


def _shift_expansion(k: ExpPolyCurve, keys):
    """Vectors ``v[(mu, m)]`` with ``coef(S_t k) = sum exp(mu t) t**m v[(mu, m)]``."""
    out = {}
    for rate, c in k.terms:
        K = c.size - 1
        for m in range(K + 1):
            v = np.zeros(len(keys), dtype=complex)
            for j in range(K + 1 - m):
                idx = next(i for i, (r, kk) in enumerate(keys) if abs(r - rate) < 1e-12 and kk == j)
                v[idx] = c[j + m] * math.comb(j + m, j)
            out[(rate, m)] = v
    return out


def entry_time(real: AffineRealization, h0: Curve | None = None, t_scan: float = 50.0,
               grid_step: float = 1e-3, tol: float = 1e-18) -> float:
    """First time the leaf curve ``psi(t)`` enters the singular set.

    For exp-poly curves the coefficients of the shifted curve are explicit
    exp-poly functions of ``t``; the relative squared residual ``g(t)``
    outside the singular span is scanned, local minima are refined and
    accepted when ``g < tol``.  Returns ``inf`` when no root is found and
    the leading residual term provably dominates for ``t > t_scan``.

    A piecewise curve cannot lie in the (analytic) singular set before its
    last knot ``b``; the search restarts from the exp-poly curve ``S_b h0``.
    """
    h0 = real.h0 if h0 is None else h0
    S = singular_set(real)
    k = h0 - S.offset
    if isinstance(k, PiecewiseCurve):
        b = k.knots[-1]
        return b + entry_time(real, k.tail.shift(b) + S.offset, t_scan, grid_step, tol)
    if k.is_zero():
        return 0.0
    keys = coef_layout([k, *S.span_basis])
    M = np.column_stack([coef_vector(s, keys) for s in S.span_basis])
    U, sv, _ = np.linalg.svd(M, full_matrices=False)
    Q = U[:, sv > 1e-12 * sv[0]]

    expansion = _shift_expansion(k, keys)
    # project each (rate, power) vector once; r(t) = sum_j a_j(t) w_j
    items = [(rate, m, v - Q @ (Q.conj().T @ v)) for (rate, m), v in expansion.items()]
    wmax = max(np.linalg.norm(w) for _, _, w in items)
    vmax = max(np.linalg.norm(v) for v in expansion.values())
    if wmax <= 1e-13 * vmax:
        return 0.0
    Wm = np.column_stack([w for _, _, w in items])
    wn2 = np.sum(np.abs(Wm) ** 2, axis=0)
    rates = np.array([rate for rate, _, _ in items])
    pows = np.array([m for _, m, _ in items], dtype=float)

    def g(t):
        """Squared residual relative to the envelope of its terms."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        # factor out the largest real exponent per t to avoid underflow
        lead = np.max(rates.real)
        amp = np.exp(np.outer(t, rates - lead)) * t[:, None] ** pows
        r = amp @ Wm.T
        num = np.sum(np.abs(r) ** 2, axis=1)
        den = np.abs(amp) ** 2 @ wn2
        return num / np.maximum(den, 1e-300)

    if g(0.0)[0] < tol:
        return 0.0
    grid = np.arange(0.0, t_scan + 0.5 * grid_step, grid_step)
    vals = np.concatenate([g(chunk) for chunk in np.array_split(grid, max(1, grid.size // 5000))])
    # g <= number of terms, and near a root g grows like (t - t*)^2, so a root
    # between grid points leaves a small local minimum on the grid
    mid = vals[1:-1]
    strict = (mid < vals[:-2]) | (mid < vals[2:])
    idx = np.flatnonzero((mid <= vals[:-2]) & (mid <= vals[2:]) & strict & (mid < 1e-3)) + 1
    for i in idx:
        res = minimize_scalar(lambda s: g(s)[0], bounds=(grid[i - 1], grid[i + 1]), method="bounded",
                              options={"xatol": 1e-12})
        if res.fun < tol:
            return float(res.x)
    if vals[-1] < tol:
        return float(grid[-1])
    if _decay_certificate(expansion, Q, t_scan):
        return math.inf
    raise Inconclusive("no entry found on the scan horizon and no decay certificate")


def _decay_certificate(expansion, Q, t_scan: float) -> bool:
    """True when the leading projected term dominates the rest for all t >= t_scan."""
    w = {key: v - Q @ (Q.conj().T @ v) for key, v in expansion.items()}
    scale = max(np.linalg.norm(v) for v in w.values())
    w = {key: v for key, v in w.items() if np.linalg.norm(v) > 1e-12 * scale}
    if not w:
        return False
    a = max(rate.real for rate, _ in w)
    lead_rates = {rate for rate, _ in w if abs(rate.real - a) < 1e-12}
    m_star = max(m for rate, m in w if rate in lead_rates)
    lead = [(rate, v) for (rate, m), v in w.items() if rate in lead_rates and m == m_star]
    freqs = {abs(rate.imag) for rate, _ in lead}
    if len(freqs) != 1:
        return False
    W = np.column_stack([v for _, v in lead])
    lower = np.linalg.svd(W, compute_uv=False)[-1] * math.sqrt(W.shape[1])
    if lower <= 1e-12 * scale:
        return False
    total = 0.0
    for (rate, m), v in w.items():
        if rate in lead_rates and m == m_star:
            continue
        gap = a - rate.real
        if gap < -1e-12 or (gap <= 1e-12 and m > m_star):
            return False
        if gap > 1e-12 and (m - m_star) / t_scan > gap:
            return False
        total += math.exp(-gap * t_scan) * t_scan ** (m - m_star) * np.linalg.norm(v)
    return total < lower


# benchmark-rate coordinates -------------------------------------------------------

class StateTransform:
    """Affine map ``z = l(psi(t)) + L y`` between coordinates and observed rates."""

    def __init__(self, real: AffineRealization, functionals: Sequence[LinearFunctional]):
        self.real = real
        self.functionals = tuple(functionals)
        if len(self.functionals) != real.d:
            raise ValueError(f"need {real.d} functionals, got {len(self.functionals)}")
        self.L = np.array([[f.apply(b) for b in real.basis] for f in self.functionals])
        cond = np.linalg.cond(self.L)
        if not np.isfinite(cond) or cond > 1e12:
            raise SingularTransform(f"observation matrix is singular (condition {cond:.3e})")
        self.L_inv = np.linalg.inv(self.L)

    def anchor(self, t: float) -> np.ndarray:
        psi = self.real.psi(t)
        return np.array([f.apply(psi) for f in self.functionals])

    def anchor_rate(self, t: float) -> np.ndarray:
        """``l(d psi / dt)``."""
        dpsi = self.real.dpsi_dt(t)
        return np.array([f.apply(dpsi) for f in self.functionals])

    def to_observed(self, t: float, y) -> np.ndarray:
        return self.anchor(t) + np.asarray(y) @ self.L.T

    def to_state(self, t: float, z) -> np.ndarray:
        return (np.asarray(z) - self.anchor(t)) @ self.L_inv.T

    def curve_from_observed(self, t: float, z) -> Curve:
        return self.real.curve(t, self.to_state(t, z))

    def drift_diffusion(self, t: float, z) -> tuple[np.ndarray, np.ndarray]:
        """Coefficients of ``dz = drift dt + diffusion dW``."""
        y = self.to_state(t, z)
        mu, gamma = self.real.mu_gamma(t, y)
        return self.anchor_rate(t) + mu @ self.L.T, gamma @ self.L.T


def state_transform(real: AffineRealization, functionals: Sequence[LinearFunctional]) -> StateTransform:
    return StateTransform(real, functionals)


def transform_from_json(real: AffineRealization, data: list[dict]) -> StateTransform:
    return StateTransform(real, [functional_from_json(f, real.vol.space.beta) for f in data])
