"""Volatility specifications ``sigma(h) = sum_i Phi_i(h) lambda_i`` and the HJM drift.

Each scalar functional ``Phi_i`` is a smooth map ``g`` applied to a short list
of linear functionals of the curve (point evaluations, running yields or
H_beta pairings).  Because the linear layer is exact, first and second
directional derivatives follow from the chain rule with no truncation error.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .curvealg import (
    Curve,
    ExpPolyCurve,
    SpaceParams,
    combine,
    inner_beta,
    membership,
    norm_beta,
    rank,
)
from .errors import DependentDirections, DomainViolation, HJMError

DRIFT_IDENTITY_TOL = 1e-12


# linear functionals ---------------------------------------------------------

@dataclass(frozen=True)
class PointEval:
    """``h -> h(x0)``."""

    x0: float

    kind = "point"

    def __post_init__(self):
        if not (math.isfinite(self.x0) and self.x0 >= 0):
            raise ValueError("PointEval needs a finite maturity x0 >= 0")

    def apply(self, h) -> float:
        return float(h(self.x0))

    def apply_grid(self, x: np.ndarray, values: np.ndarray) -> np.ndarray:
        if self.x0 > x[-1] + 1e-12:
            raise ValueError(f"maturity {self.x0} outside the grid [0, {x[-1]}]")
        return np.interp(self.x0, x, values) if values.ndim == 1 else \
            np.array([np.interp(self.x0, x, v) for v in values])

    def operator_norm(self, beta: float) -> float:
        # |h(x0)| <= |h(0)| + int_0^x0 |h'| and Cauchy-Schwarz against e^{-beta x}
        return math.sqrt(1.0 + (1.0 - math.exp(-beta * self.x0)) / beta)

    def to_json(self) -> dict:
        return {"kind": "point", "params": {"x0": self.x0}}


@dataclass(frozen=True)
class YieldEval:
    """``h -> (1/x0) int_0^x0 h``."""

    x0: float

    kind = "yield"

    def __post_init__(self):
        if not (math.isfinite(self.x0) and self.x0 > 0):
            raise ValueError("YieldEval needs x0 > 0")

    def apply(self, h) -> float:
        return float(h.integral(self.x0)) / self.x0

    def apply_grid(self, x: np.ndarray, values: np.ndarray) -> np.ndarray:
        if self.x0 > x[-1] + 1e-12:
            raise ValueError(f"maturity {self.x0} outside the grid [0, {x[-1]}]")
        n = int(np.searchsorted(x, self.x0, side="right"))
        xs = np.append(x[:n], self.x0)
        vs = np.interp(xs, x, values)
        return np.trapezoid(vs, xs) / self.x0

    def operator_norm(self, beta: float) -> float:
        return PointEval(self.x0).operator_norm(beta)

    def to_json(self) -> dict:
        return {"kind": "yield", "params": {"x0": self.x0}}


@dataclass(frozen=True)
class Pairing:
    """``h -> <g, h>_beta``."""

    g: ExpPolyCurve
    beta: float

    kind = "pairing"

    def __post_init__(self):
        if not membership(self.g, self.beta).in_H_beta:
            raise ValueError("pairing curve must lie in H_beta")

    def apply(self, h) -> float:
        return inner_beta(self.g, h, self.beta)

    def apply_grid(self, x: np.ndarray, values: np.ndarray) -> np.ndarray:
        dv = np.gradient(values, x)
        dg = self.g.derivative()(x)
        return self.g(0.0) * values[0] + np.trapezoid(dg * dv * np.exp(self.beta * x), x)

    def operator_norm(self, beta: float) -> float:
        return norm_beta(self.g, self.beta)

    def to_json(self) -> dict:
        return {"kind": "pairing", "params": {"g": self.g.to_json(), "beta": self.beta}}


LinearFunctional = PointEval | YieldEval | Pairing


def functional_from_json(data: dict, beta: float) -> LinearFunctional:
    kind, params = data["kind"], data.get("params", {})
    if kind == "point":
        return PointEval(float(params["x0"]))
    if kind == "yield":
        return YieldEval(float(params["x0"]))
    if kind == "pairing":
        return Pairing(ExpPolyCurve.from_json(params["g"]), float(params.get("beta", beta)))
    raise ValueError(f"unknown linear functional kind {kind!r}")


# scalar maps ------------------------------------------------------------------
# value/grad/hess are vectorised: u has shape (m, ...) and the trailing axes
# broadcast, so a whole batch of states is handled in one call.

@dataclass(frozen=True)
class Constant:
    c: float

    kind = "constant"

    def value(self, u):
        u = np.asarray(u, dtype=float)
        return np.full(u.shape[1:], self.c)

    def grad(self, u):
        return np.zeros_like(np.asarray(u, dtype=float))

    def hess(self, u):
        u = np.asarray(u, dtype=float)
        return np.zeros((u.shape[0],) + u.shape)

    def lipschitz(self) -> float:
        return 0.0

    def bound(self) -> float:
        return abs(self.c)

    def to_json(self) -> dict:
        return {"kind": "constant", "params": {"c": self.c}}


@dataclass(frozen=True)
class TanhAffine:
    """``u -> tanh(a + b . u)``."""

    a: float
    b: tuple[float, ...]

    kind = "tanh_affine"

    def _s(self, u):
        u = np.asarray(u, dtype=float)
        b = np.asarray(self.b).reshape((-1,) + (1,) * (u.ndim - 1))
        return self.a + np.sum(b * u, axis=0), b

    def value(self, u):
        s, _ = self._s(u)
        return np.tanh(s)

    def grad(self, u):
        s, b = self._s(u)
        return (1.0 - np.tanh(s) ** 2) * b

    def hess(self, u):
        s, b = self._s(u)
        th = np.tanh(s)
        bb = b[:, None] * b[None, :]
        return -2.0 * th * (1.0 - th**2) * bb

    def lipschitz(self) -> float:
        return float(np.linalg.norm(self.b, 1))

    def bound(self) -> float:
        return 1.0

    def to_json(self) -> dict:
        return {"kind": "tanh_affine", "params": {"a": self.a, "b": list(self.b)}}


@dataclass(frozen=True)
class SmoothedSqrt:
    """``u -> sqrt(max(c + d . u, eps))``; globally Lipschitz but unbounded."""

    c: float
    d: tuple[float, ...]
    eps: float = 1e-6

    kind = "smoothed_sqrt"

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("SmoothedSqrt needs eps > 0")

    def _z(self, u):
        u = np.asarray(u, dtype=float)
        d = np.asarray(self.d).reshape((-1,) + (1,) * (u.ndim - 1))
        return self.c + np.sum(d * u, axis=0), d

    def value(self, u):
        z, _ = self._z(u)
        return np.sqrt(np.maximum(z, self.eps))

    def grad(self, u):
        z, d = self._z(u)
        active = z > self.eps
        return np.where(active, 0.5 / np.sqrt(np.maximum(z, self.eps)), 0.0) * d

    def hess(self, u):
        z, d = self._z(u)
        active = z > self.eps
        f = np.where(active, -0.25 * np.maximum(z, self.eps) ** -1.5, 0.0)
        return f * (d[:, None] * d[None, :])

    def lipschitz(self) -> float:
        return float(np.linalg.norm(self.d, 1)) / (2.0 * math.sqrt(self.eps))

    def bound(self) -> float:
        return math.inf

    def to_json(self) -> dict:
        return {"kind": "smoothed_sqrt", "params": {"c": self.c, "d": list(self.d), "eps": self.eps}}


ScalarMap = Constant | TanhAffine | SmoothedSqrt


def scalar_map_from_json(data: dict) -> ScalarMap:
    kind, p = data["kind"], data.get("params", {})
    if kind == "constant":
        return Constant(float(p["c"]))
    if kind in ("tanh_affine", "affine"):
        return TanhAffine(float(p.get("a", 0.0)), tuple(float(v) for v in np.atleast_1d(p["b"])))
    if kind == "smoothed_sqrt":
        return SmoothedSqrt(float(p["c"]), tuple(float(v) for v in np.atleast_1d(p["d"])),
                            float(p.get("eps", 1e-6)))
    raise ValueError(f"unknown scalar map kind {kind!r}")


@dataclass(frozen=True)
class Phi:
    """Scalar functional ``h -> g(l_1(h), ..., l_m(h))``."""

    map: ScalarMap
    functionals: tuple[LinearFunctional, ...] = ()

    def __post_init__(self):
        m = len(self.functionals)
        need = {"tanh_affine": len(getattr(self.map, "b", ())),
                "smoothed_sqrt": len(getattr(self.map, "d", ()))}.get(self.map.kind, m)
        if need != m:
            raise ValueError(f"map {self.map.kind} expects {need} functionals, got {m}")

    @property
    def is_constant(self) -> bool:
        return isinstance(self.map, Constant)

    def linear_values(self, h) -> np.ndarray:
        return np.array([f.apply(h) for f in self.functionals], dtype=float)

    def __call__(self, h) -> float:
        return float(self.map.value(self.linear_values(h).reshape(-1, 1))[0]) if self.functionals \
            else float(self.map.value(np.zeros((0, 1)))[0])

    def d(self, h, v) -> float:
        if not self.functionals:
            return 0.0
        u = self.linear_values(h).reshape(-1, 1)
        return float(self.map.grad(u)[:, 0] @ self.linear_values(v))

    def d2(self, h, v, w) -> float:
        if not self.functionals:
            return 0.0
        u = self.linear_values(h).reshape(-1, 1)
        H = self.map.hess(u)[:, :, 0]
        return float(self.linear_values(v) @ H @ self.linear_values(w))

    def lipschitz(self, beta: float) -> float:
        """Constant L with ``|Phi(h1) - Phi(h2)| <= L ||h1 - h2||_beta``."""
        if self.map.lipschitz() == 0:
            return 0.0
        return self.map.lipschitz() * max(f.operator_norm(beta) for f in self.functionals)

    def bound(self) -> float:
        return self.map.bound()

    def to_json(self) -> dict:
        return {"map": self.map.to_json(), "functionals": [f.to_json() for f in self.functionals]}

    @classmethod
    def from_json(cls, data: dict, beta: float) -> "Phi":
        return cls(scalar_map_from_json(data["map"]),
                   tuple(functional_from_json(f, beta) for f in data.get("functionals", [])))


def constant_phi(c: float = 1.0) -> Phi:
    return Phi(Constant(c))


def dPhi(phi: Phi, h, v) -> float:
    return phi.d(h, v)


def d2Phi(phi: Phi, h, v, w) -> float:
    return phi.d2(h, v, w)


def d_product(phi_i: Phi, phi_j: Phi, h, v) -> float:
    """``D(Phi_i Phi_j)(h) v``."""
    return phi_i.d(h, v) * phi_j(h) + phi_i(h) * phi_j.d(h, v)


def d2_product(phi_i: Phi, phi_j: Phi, h, v, w) -> float:
    """``D^2(Phi_i Phi_j)(h)(v, w)``."""
    return (phi_i.d2(h, v, w) * phi_j(h) + phi_i.d(h, v) * phi_j.d(h, w)
            + phi_i.d(h, w) * phi_j.d(h, v) + phi_i(h) * phi_j.d2(h, v, w))


# volatility specification ------------------------------------------------------

@dataclass(frozen=True)
class VolatilitySpec:
    """Directions ``lambda_i`` and their scalar functionals ``Phi_i``.

    With ``strict=True`` the directions must be independent exp-poly curves
    in H0_{beta'}.  ``strict=False`` admits catalog models that break the
    space axioms (a constant direction, or a direction given in closed form);
    the violations are listed in ``warnings``.
    """

    directions: tuple
    functionals: tuple[Phi, ...]
    space: SpaceParams = field(default_factory=SpaceParams)
    strict: bool = True
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "directions", tuple(self.directions))
        object.__setattr__(self, "functionals", tuple(self.functionals))
        if len(self.directions) != len(self.functionals):
            raise ValueError("need one functional per direction")
        warnings = list(self.warnings)
        exp_poly = [lam for lam in self.directions if isinstance(lam, ExpPolyCurve)]
        if len(exp_poly) == len(self.directions) and rank(exp_poly) < len(exp_poly):
            raise DependentDirections("volatility directions are linearly dependent")
        for i, lam in enumerate(self.directions):
            if isinstance(lam, ExpPolyCurve):
                ok = membership(lam, self.space.beta_prime).in_H0_beta
            else:
                ok = bool(getattr(lam, "in_H0", lambda b: False)(self.space.beta_prime))
            if not ok:
                msg = f"direction {i} is not in H0 for beta'={self.space.beta_prime}"
                if self.strict:
                    raise DomainViolation(msg)
                if msg not in warnings:
                    warnings.append(msg)
        object.__setattr__(self, "warnings", tuple(warnings))

    @property
    def p(self) -> int:
        return len(self.directions)

    @property
    def membership_warning(self) -> bool:
        return bool(self.warnings)

    @property
    def constant_vol(self) -> bool:
        return all(phi.is_constant for phi in self.functionals)

    def phi_values(self, h) -> np.ndarray:
        return np.array([phi(h) for phi in self.functionals])

    def to_json(self) -> dict:
        return {
            "directions": [lam.to_json() for lam in self.directions],
            "functionals": [phi.to_json() for phi in self.functionals],
            "beta": self.space.beta,
            "beta_prime": self.space.beta_prime,
            "strict": self.strict,
        }

    @classmethod
    def from_json(cls, data: dict, space: SpaceParams | None = None) -> "VolatilitySpec":
        if space is None:
            space = SpaceParams(float(data.get("beta", 0.5)), float(data.get("beta_prime", 1.5)))
        return cls(
            tuple(ExpPolyCurve.from_json(d) for d in data["directions"]),
            tuple(Phi.from_json(f, space.beta) for f in data["functionals"]),
            space,
            bool(data.get("strict", True)),
        )


def _check_state(spec: VolatilitySpec, h: Curve):
    if spec.strict and not membership(h, spec.space.beta).in_H_beta:
        raise DomainViolation("curve is not in H_beta")


def sigma(spec: VolatilitySpec, h: Curve) -> ExpPolyCurve:
    _check_state(spec, h)
    return combine(spec.phi_values(h), spec.directions)


def sigma_values(spec: VolatilitySpec, h: Curve, x) -> np.ndarray:
    """``sigma(h)`` on a maturity grid; works for closed-form directions too."""
    vals = spec.phi_values(h)
    return sum(v * np.asarray(lam(x)) for v, lam in zip(vals, spec.directions))


def hjm_drift(spec: VolatilitySpec, h: Curve) -> ExpPolyCurve:
    """``sigma(h) * int_0^x sigma(h)``; cross-checked against ``0.5 d/dx (I sigma)**2``."""
    s = sigma(spec, h)
    S = s.antiderivative()
    drift = s * S
    other = (S * S).derivative().scale(0.5)
    gap = (drift - other).max_coeff()
    if gap > DRIFT_IDENTITY_TOL * max(1.0, drift.max_coeff()):
        raise HJMError(f"drift identity violated by {gap:.3e}")
    return drift


def nu(spec: VolatilitySpec, h: Curve) -> Curve:
    """Drift field ``h' + alpha(h)``."""
    dh = h.derivative()
    if not membership(dh, spec.space.beta).in_H_beta:
        raise DomainViolation("derivative of the curve leaves H_beta")
    return dh + hjm_drift(spec, h)


# necessity evidence ------------------------------------------------------------

@dataclass
class NecessityReport:
    branch: str
    description: str
    prod_phi_diff_max: float
    prod_phi_diff_holds: bool
    lin_ind_rank: int
    lin_ind_pairs: int
    lin_ind_holds: bool
    lin_ind_kl: tuple | None
    cir1_holds: bool | None
    cir2_holds: bool | None
    sigma_rank: int
    n_samples: int
    seed: int

    def to_json(self) -> dict:
        return dict(self.__dict__)


class _LazySum:
    """``h0 + sum c_i lam_i`` for directions without exp-poly arithmetic (values and integrals only)."""

    def __init__(self, h0, coefs, curves):
        self.parts = [(1.0, h0), *zip(coefs, curves)]

    def __call__(self, x):
        return sum(c * np.asarray(g(x), dtype=float) for c, g in self.parts)

    def eval(self, x):
        return float(self(x))

    def integral(self, x):
        return sum(c * np.asarray(g.integral(x), dtype=float) for c, g in self.parts)


def _sample_rank(M: np.ndarray, rtol: float = 1e-9, atol: float = 1e-12) -> int:
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] <= atol:
        return 0
    return int(np.sum(s > max(rtol * s[0], atol)))


def necessity_check(spec: VolatilitySpec, h0: Curve, n_samples: int = 50, seed: int = 0,
                    sample_scale: float = 0.01, tol: float = 1e-9) -> NecessityReport:
    """Sampling evidence for which structural branch applies to ``spec``.

    States are drawn on ``h0 + span(directions)`` with uniform coordinates
    in ``[-sample_scale, sample_scale]``.  Branch priority: vanishing product
    derivatives, then independence of the second-derivative maps, then the
    CIR-type pair of conditions (single direction only).
    """
    p = spec.p
    lams = spec.directions
    phis = spec.functionals
    rng = np.random.default_rng(seed)
    exact = all(isinstance(lam, ExpPolyCurve) for lam in lams)
    samples = []
    for _ in range(n_samples):
        c = rng.uniform(-1.0, 1.0, p) * sample_scale
        samples.append(h0 + combine(c, lams) if exact else _LazySum(h0, c, lams))

    # (i) D(Phi_i Phi_j)(h0) lambda_k
    diffs = [abs(d_product(phis[i], phis[j], h0, lams[k]))
             for i in range(p) for j in range(i, p) for k in range(p)]
    diff_max = max(diffs, default=0.0)
    diff_holds = diff_max <= tol

    # (iii) for some (k, l): h -> D^2(Phi_i Phi_j)(h)(lambda_k, lambda_l), i <= j,
    # are linearly independent as functions on the sampled states
    pairs = [(i, j) for i in range(p) for j in range(i, p)]
    lin_rank, lin_kl = 0, None
    for k in range(p):
        for l in range(k, p):
            M = np.array([[d2_product(phis[i], phis[j], h, lams[k], lams[l]) for i, j in pairs]
                          for h in samples], dtype=float)
            r = _sample_rank(M)
            if r > lin_rank or lin_kl is None:
                lin_rank, lin_kl = r, (k, l)
            if r == len(pairs):
                break
        if lin_rank == len(pairs):
            break
    lin_holds = lin_rank == len(pairs)

    cir1 = cir2 = None
    if p == 1:
        d2 = [abs(d2_product(phis[0], phis[0], h, lams[0], lams[0])) for h in samples]
        d1 = [abs(d_product(phis[0], phis[0], h, lams[0])) for h in samples]
        cir1 = max(d2) <= tol
        cir2 = min(d1) > tol

    xs = np.linspace(0.0, 10.0, 64)
    S = np.array([sigma_values(spec, h, xs) for h in samples])
    sig_rank = _sample_rank(S)

    if diff_holds:
        branch = "prod_phi_diff"
        text = "product derivatives vanish at h0: directions must be quasi-exponential"
    elif lin_holds:
        branch = "prod_phi_lin_ind"
        text = "second-derivative test active: directions must be quasi-exponential"
    elif cir1 and cir2:
        branch = "cir"
        text = "squared functional is affine and non-degenerate: CIR-type direction admissible"
    else:
        branch = "inconclusive"
        text = "no sufficient condition detected on the samples"
    return NecessityReport(branch, text, diff_max, diff_holds, lin_rank, len(pairs), lin_holds, lin_kl,
                           cir1, cir2, sig_rank, n_samples, seed)
