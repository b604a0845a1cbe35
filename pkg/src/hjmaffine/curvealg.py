"""Exponential-polynomial forward curves and the weighted Hilbert space H_beta.

A curve is a finite sum of terms ``c_k x**k exp(mu x)`` with complex rates
kept in conjugate pairs, so every curve is real valued.  All operations are
exact up to floating point: derivative, antiderivative, products and the
shift semigroup map the class into itself, and the weighted norm

    ||h||_beta**2 = h(0)**2 + int_0^inf h'(x)**2 exp(beta x) dx

is evaluated in closed form.

``PiecewiseCurve`` glues exp-poly pieces at finitely many knots.  It is used
for start curves that are only piecewise quasi-exponential.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence, Union

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import DependentBasis, DivergentIntegral, NotInSpan

RATE_TOL = 1e-12
COEF_RTOL = 1e-13
SPAN_RTOL = 1e-10
RANK_RTOL = 1e-10


@dataclass(frozen=True)
class SpaceParams:
    """Weights of the forward-curve spaces, ``0 < beta < beta_prime``."""

    beta: float = 0.5
    beta_prime: float = 1.5

    def __post_init__(self):
        if not (math.isfinite(self.beta) and math.isfinite(self.beta_prime)):
            raise ValueError("space weights must be finite")
        if not 0.0 < self.beta < self.beta_prime:
            raise ValueError(
                f"need 0 < beta < beta_prime, got beta={self.beta}, beta_prime={self.beta_prime}"
            )

    def sup_constant(self) -> float:
        """Constant C with sup|h| <= C ||h||_beta on H_beta."""
        return math.sqrt(1.0 + 1.0 / self.beta)


class Membership(NamedTuple):
    in_H_beta: bool
    in_H0_beta: bool


def _trim(c: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(c)
    if nz.size == 0:
        return c[:0]
    return c[: nz[-1] + 1]


def _canonical(terms: Iterable[tuple[complex, Sequence[complex]]]):
    groups: list[list] = []
    for rate, coeffs in terms:
        rate = complex(rate)
        if not (math.isfinite(rate.real) and math.isfinite(rate.imag)):
            raise ValueError("rates must be finite")
        c = np.atleast_1d(np.asarray(coeffs, dtype=complex)).ravel()
        if c.size == 0:
            continue
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficients must be finite")
        re = 0.0 if abs(rate.real) < RATE_TOL else rate.real
        im = 0.0 if abs(rate.imag) < RATE_TOL else rate.imag
        rate = complex(re, im)
        for g in groups:
            if abs(g[0] - rate) < RATE_TOL:
                g[1] = _padd(g[1], c)
                break
        else:
            groups.append([rate, c.copy()])

    # Conjugate closure: the curve is the real part of the given sum.
    closed: dict[complex, np.ndarray] = {}
    for rate, c in groups:
        if rate.imag == 0.0:
            closed[rate] = closed.get(rate, np.zeros(0, complex))
            closed[rate] = _padd(closed[rate], c.real.astype(complex))
        else:
            key = rate if rate.imag > 0 else rate.conjugate()
            half = 0.5 * (c if rate.imag > 0 else c.conj())
            closed[key] = _padd(closed.get(key, np.zeros(0, complex)), half)

    scale = max((np.max(np.abs(c)) for c in closed.values() if c.size), default=0.0)
    out = []
    for rate, c in closed.items():
        c = c.copy()
        c[np.abs(c) < COEF_RTOL * scale] = 0.0
        c = _trim(c)
        if c.size == 0:
            continue
        if rate.imag == 0.0:
            out.append((rate, c))
        else:
            out.append((rate, c))
            out.append((rate.conjugate(), c.conj()))
    out.sort(key=lambda rc: (rc[0].real, rc[0].imag))
    for _, c in out:
        c.flags.writeable = False
    return tuple(out)


def _padd(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n = max(a.size, b.size)
    out = np.zeros(n, dtype=complex)
    out[: a.size] += a
    out[: b.size] += b
    return out


class ExpPolyCurve:
    """Real curve ``x -> sum_mu sum_k c[mu][k] x**k exp(mu x)``.

    Construct from ``(rate, coeffs)`` pairs.  A non-real rate given without
    its conjugate is completed so that the curve is the real part of the sum.
    Instances are immutable.
    """

    __slots__ = ("_terms",)

    def __init__(self, terms: Iterable[tuple[complex, Sequence[complex]]] = ()):
        self._terms = _canonical(terms)

    @classmethod
    def constant(cls, c: float) -> "ExpPolyCurve":
        return cls([(0.0, [c])])

    @classmethod
    def exp(cls, rate: complex, coeff: complex = 1.0, power: int = 0) -> "ExpPolyCurve":
        coeffs = np.zeros(power + 1, dtype=complex)
        coeffs[power] = coeff
        return cls([(rate, coeffs)])

    @classmethod
    def zero(cls) -> "ExpPolyCurve":
        return cls()

    @property
    def terms(self) -> tuple[tuple[complex, np.ndarray], ...]:
        return self._terms

    @property
    def rates(self) -> list[complex]:
        return [r for r, _ in self._terms]

    def is_zero(self) -> bool:
        return not self._terms

    def max_coeff(self) -> float:
        return max((float(np.max(np.abs(c))) for _, c in self._terms), default=0.0)

    def constant_part(self) -> float:
        for rate, c in self._terms:
            if rate == 0:
                return float(c[0].real)
        return 0.0

    # evaluation
    def __call__(self, x):
        xa = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(xa)):
            raise ValueError("maturity must be finite")
        acc = np.zeros(xa.shape, dtype=complex)
        for rate, c in self._terms:
            poly = np.zeros(xa.shape, dtype=complex)
            for ck in c[::-1]:
                poly = poly * xa + ck
            acc += poly * np.exp(rate * xa)
        out = acc.real
        return float(out) if out.ndim == 0 else out

    def eval(self, x):
        return self(x)

    def integral(self, x):
        """``int_0^x h``."""
        return self.antiderivative()(x)

    def limit_at_infinity(self) -> float:
        """``h(inf)``; raises ``ValueError`` when the limit does not exist."""
        value = 0.0
        for rate, c in self._terms:
            if rate == 0:
                if c.size > 1:
                    raise ValueError("polynomial part has no limit")
                value = float(c[0].real)
            elif rate.real >= 0:
                raise ValueError("curve has no limit at infinity")
        return value

    # algebra
    def derivative(self) -> "ExpPolyCurve":
        out = []
        for rate, c in self._terms:
            k = np.arange(c.size)
            d = rate * c
            d[:-1] += k[1:] * c[1:]
            out.append((rate, d))
        return ExpPolyCurve(out)

    def antiderivative(self) -> "ExpPolyCurve":
        """``Lambda(x) = int_0^x h`` with ``Lambda(0) = 0``."""
        out = []
        const = 0.0 + 0.0j
        for rate, c in self._terms:
            K = c.size - 1
            if rate == 0:
                k = np.arange(1, K + 2)
                out.append((0.0, np.concatenate([[0.0], c / k])))
                continue
            # P' + rate P = c, solved from the top power down.
            P = np.zeros(K + 1, dtype=complex)
            for j in range(K, -1, -1):
                nxt = (j + 1) * P[j + 1] if j < K else 0.0
                P[j] = (c[j] - nxt) / rate
            out.append((rate, P))
            const -= P[0]
        out.append((0.0, [const]))
        return ExpPolyCurve(out)

    def shift(self, t: float) -> "ExpPolyCurve":
        """``(S_t h)(x) = h(t + x)``."""
        t = float(t)
        if not math.isfinite(t) or t < 0:
            raise ValueError("shift must be finite and non-negative")
        if t == 0.0:
            return self
        out = []
        for rate, c in self._terms:
            K = c.size - 1
            new = np.zeros(K + 1, dtype=complex)
            tp = [t**i for i in range(K + 1)]
            for k in range(K + 1):
                for j in range(k + 1):
                    new[j] += c[k] * math.comb(k, j) * tp[k - j]
            out.append((rate, new * np.exp(rate * t)))
        return ExpPolyCurve(out)

    def multiply(self, other: "ExpPolyCurve") -> "ExpPolyCurve":
        out = []
        for r1, c1 in self._terms:
            for r2, c2 in other._terms:
                out.append((r1 + r2, np.convolve(c1, c2)))
        return ExpPolyCurve(out)

    def scale(self, a: float) -> "ExpPolyCurve":
        return ExpPolyCurve([(r, a * c) for r, c in self._terms])

    def __add__(self, other):
        if isinstance(other, PiecewiseCurve):
            return other + self
        if isinstance(other, (int, float)):
            other = ExpPolyCurve.constant(other)
        if not isinstance(other, ExpPolyCurve):
            return NotImplemented
        return ExpPolyCurve(self._terms + other._terms)

    __radd__ = __add__

    def __neg__(self):
        return self.scale(-1.0)

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            other = ExpPolyCurve.constant(other)
        if not isinstance(other, (ExpPolyCurve, PiecewiseCurve)):
            return NotImplemented
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, ExpPolyCurve):
            return self.multiply(other)
        if isinstance(other, (int, float, np.floating, np.integer)):
            return self.scale(float(other))
        return NotImplemented

    __rmul__ = __mul__

    def allclose(self, other: "ExpPolyCurve", atol: float = 1e-12) -> bool:
        return (self - other).max_coeff() <= atol

    def __repr__(self):
        parts = []
        for rate, c in self._terms:
            if rate.imag < 0:
                continue
            r = f"{rate.real:g}" if rate.imag == 0 else f"{rate.real:g}{rate.imag:+g}i"
            coeffs = ", ".join(
                f"{v.real:.6g}" if v.imag == 0 else f"{v:.6g}" for v in c
            )
            parts.append(f"[{r}: {coeffs}]")
        return f"ExpPolyCurve({' '.join(parts) or '0'})"

    # serialization
    def to_json(self) -> list[dict]:
        return [
            {
                "rate_re": float(r.real),
                "rate_im": float(r.imag),
                "coeffs": [[float(v.real), float(v.imag)] if v.imag != 0 else float(v.real) for v in c],
            }
            for r, c in self._terms
        ]

    @classmethod
    def from_json(cls, data: list[dict]) -> "ExpPolyCurve":
        terms = []
        for t in data:
            coeffs = [complex(v[0], v[1]) if isinstance(v, (list, tuple)) else complex(v) for v in t["coeffs"]]
            terms.append((complex(t.get("rate_re", 0.0), t.get("rate_im", 0.0)), coeffs))
        return cls(terms)


def integrate_segment(h: ExpPolyCurve, a: float, b: float, weight_rate: float = 0.0) -> float:
    """``int_a^b h(x) exp(weight_rate x) dx``; ``b`` may be ``inf``."""
    g = h if weight_rate == 0.0 else ExpPolyCurve([(r + weight_rate, c) for r, c in h.terms])
    if math.isinf(b):
        total = 0.0 + 0.0j
        for rate, c in g.terms:
            if rate.real >= 0:
                raise DivergentIntegral("integrand does not decay")
            if a == 0.0:
                # int_0^inf x^n e^{rate x} dx = n!/(-rate)^{n+1}
                n = np.arange(c.size)
                facts = np.array([math.factorial(int(k)) for k in n], dtype=float)
                total += np.sum(c * facts / (-rate) ** (n + 1))
            else:
                total -= _antideriv_term_at(rate, c, a)
        return float(total.real)
    G = g.antiderivative()
    return float(G(b) - G(a))


def _antideriv_term_at(rate: complex, c: np.ndarray, x: float) -> complex:
    # primitive P(x) e^{rate x} of a decaying term, vanishing at infinity
    K = c.size - 1
    P = np.zeros(K + 1, dtype=complex)
    for j in range(K, -1, -1):
        nxt = (j + 1) * P[j + 1] if j < K else 0.0
        P[j] = (c[j] - nxt) / rate
    return np.polyval(P[::-1], x) * np.exp(rate * x)


class PiecewiseCurve:
    """Curve equal to ``pieces[i]`` on ``[knots[i-1], knots[i])``.

    ``knots`` is strictly increasing and positive; there is one more piece
    than knots, the last one covering ``[knots[-1], inf)``.  Adjacent pieces
    that coincide are merged, so a piecewise curve with a single piece is
    returned as its ``ExpPolyCurve`` by :func:`make_piecewise`.
    """

    __slots__ = ("knots", "pieces")

    def __init__(self, knots: Sequence[float], pieces: Sequence[ExpPolyCurve]):
        knots = tuple(float(k) for k in knots)
        pieces = tuple(pieces)
        if len(pieces) != len(knots) + 1:
            raise ValueError("need exactly one more piece than knots")
        if any(k <= 0 for k in knots) or any(b <= a for a, b in zip(knots, knots[1:])):
            raise ValueError("knots must be positive and strictly increasing")
        self.knots = knots
        self.pieces = pieces

    @property
    def tail(self) -> ExpPolyCurve:
        return self.pieces[-1]

    def __call__(self, x):
        xa = np.asarray(x, dtype=float)
        idx = np.searchsorted(self.knots, xa, side="right")
        out = np.zeros(xa.shape)
        for i, piece in enumerate(self.pieces):
            mask = idx == i
            if np.any(mask):
                out[mask] = piece(xa[mask])
        return float(out) if out.ndim == 0 else out

    def eval(self, x):
        return self(x)

    def _map(self, f) -> "PiecewiseCurve | ExpPolyCurve":
        return make_piecewise(self.knots, [f(p) for p in self.pieces])

    def derivative(self):
        return self._map(lambda p: p.derivative())

    def antiderivative(self):
        prims = [p.antiderivative() for p in self.pieces]
        out = [prims[0]]
        for k, (prev, cur) in zip(self.knots, zip(prims, prims[1:])):
            offset = out[-1](k) - cur(k)
            out.append(cur + ExpPolyCurve.constant(offset))
        return make_piecewise(self.knots, out)

    def integral(self, x):
        return self.antiderivative()(x)

    def shift(self, t: float):
        t = float(t)
        if not math.isfinite(t) or t < 0:
            raise ValueError("shift must be finite and non-negative")
        if t == 0.0:
            return self
        keep = [i for i, k in enumerate(self.knots) if k > t]
        knots = [self.knots[i] - t for i in keep]
        first = keep[0] if keep else len(self.knots)
        pieces = [p.shift(t) for p in self.pieces[first:]]
        return make_piecewise(knots, pieces)

    def scale(self, a: float):
        return self._map(lambda p: p.scale(a))

    def __neg__(self):
        return self.scale(-1.0)

    def __add__(self, other):
        if isinstance(other, (int, float)):
            other = ExpPolyCurve.constant(other)
        if isinstance(other, ExpPolyCurve):
            return self._map(lambda p: p + other)
        if isinstance(other, PiecewiseCurve):
            knots = sorted(set(self.knots) | set(other.knots))
            a, b = self.refine(knots), other.refine(knots)
            return make_piecewise(knots, [p + q for p, q in zip(a, b)])
        return NotImplemented

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating)):
            return self.scale(float(other))
        if isinstance(other, ExpPolyCurve):
            return self._map(lambda p: p * other)
        return NotImplemented

    __rmul__ = __mul__

    def refine(self, knots: Sequence[float]) -> list[ExpPolyCurve]:
        """Pieces of this curve on the intervals cut by a superset of knots."""
        out = []
        edges = [0.0, *knots]
        for left in edges:
            idx = int(np.searchsorted(self.knots, left, side="right"))
            out.append(self.pieces[idx])
        return out

    def max_coeff(self) -> float:
        return max(p.max_coeff() for p in self.pieces)

    def is_zero(self) -> bool:
        return all(p.is_zero() for p in self.pieces)

    def continuity_gaps(self, order: int = 1) -> list[float]:
        """Jumps of the curve and its first ``order`` derivatives at the knots."""
        gaps = []
        pieces = list(self.pieces)
        for _ in range(order + 1):
            gaps.append(max(abs(a(k) - b(k)) for k, a, b in zip(self.knots, pieces, pieces[1:])))
            pieces = [p.derivative() for p in pieces]
        return gaps

    def __repr__(self):
        return f"PiecewiseCurve(knots={list(self.knots)}, pieces={list(self.pieces)})"

    def to_json(self) -> dict:
        return {"knots": list(self.knots), "pieces": [p.to_json() for p in self.pieces]}

    @classmethod
    def from_json(cls, data: dict):
        return make_piecewise(data["knots"], [ExpPolyCurve.from_json(p) for p in data["pieces"]])


Curve = Union[ExpPolyCurve, PiecewiseCurve]


def make_piecewise(knots: Sequence[float], pieces: Sequence[ExpPolyCurve], atol: float = 1e-14) -> Curve:
    """Build a piecewise curve, merging coinciding neighbours."""
    knots = list(knots)
    pieces = list(pieces)
    i = 0
    while i < len(knots):
        scale = max(1.0, pieces[i].max_coeff(), pieces[i + 1].max_coeff())
        if (pieces[i] - pieces[i + 1]).max_coeff() <= atol * scale:
            del knots[i]
            del pieces[i + 1]
        else:
            i += 1
    if not knots:
        return pieces[0]
    return PiecewiseCurve(knots, pieces)


def curve_from_json(data) -> Curve:
    if isinstance(data, dict):
        return PiecewiseCurve.from_json(data)
    return ExpPolyCurve.from_json(data)


# module-level operations --------------------------------------------------

def eval(h: Curve, x):  # noqa: A001 - mirrors the curve method
    return h(x)


def derivative(h: Curve) -> Curve:
    return h.derivative()


def antiderivative(h: Curve) -> Curve:
    return h.antiderivative()


def multiply(h: ExpPolyCurve, g: ExpPolyCurve) -> ExpPolyCurve:
    return h.multiply(g)


def shift(h: Curve, t: float) -> Curve:
    if t < 0:
        raise ValueError("shift time must be non-negative")
    return h.shift(t)


def membership(h: Curve, beta: float) -> Membership:
    """Membership of ``h`` in H_beta and in H0_beta."""
    if isinstance(h, PiecewiseCurve):
        tail = membership(h.tail, beta)
        continuous = h.continuity_gaps(order=0)[0] <= 1e-12 * max(1.0, h.max_coeff())
        return Membership(tail.in_H_beta and continuous, tail.in_H0_beta and continuous)
    const = 0.0
    for rate, c in h.terms:
        if rate == 0:
            if c.size > 1:
                return Membership(False, False)
            const = float(c[0].real)
        elif 2.0 * rate.real + beta >= 0:
            return Membership(False, False)
    return Membership(True, const == 0.0)


def _require_member(h: Curve, beta: float):
    if not membership(h, beta).in_H_beta:
        raise DivergentIntegral(f"curve is not in H_beta for beta={beta}")


def inner_beta(g: Curve, h: Curve, beta: float) -> float:
    """``g(0) h(0) + int g' h' exp(beta x) dx`` in closed form."""
    _require_member(g, beta)
    _require_member(h, beta)
    value = g(0.0) * h(0.0)
    dg, dh = g.derivative(), h.derivative()
    knots = sorted(set(getattr(g, "knots", ())) | set(getattr(h, "knots", ())))
    pg = dg.refine(knots) if isinstance(dg, PiecewiseCurve) else [dg] * (len(knots) + 1)
    ph = dh.refine(knots) if isinstance(dh, PiecewiseCurve) else [dh] * (len(knots) + 1)
    edges = [0.0, *knots, math.inf]
    for a, b, p, q in zip(edges, edges[1:], pg, ph):
        value += integrate_segment(p * q, a, b, beta)
    return float(value)


def norm_beta(h: Curve, beta: float) -> float:
    """Closed-form H_beta norm; raises ``DivergentIntegral`` outside H_beta."""
    return math.sqrt(max(inner_beta(h, h, beta), 0.0))


def _tail_horizon(h: Curve) -> float:
    """Maturity beyond which every decaying term is below 1e-17 of its scale."""
    pieces = h.pieces if isinstance(h, PiecewiseCurve) else (h,)
    x_star = max(getattr(h, "knots", (0.0,)) or (0.0,)) + 1.0
    for p in pieces:
        for rate, c in p.terms:
            if rate.real < 0:
                K = c.size - 1
                a = -rate.real
                # x^K e^{-a x} < 1e-17 once a x > 40 + K log x
                x = 40.0 / a
                for _ in range(50):
                    x = (40.0 + K * math.log(max(x, 1.0))) / a
                x_star = max(x_star, x)
    return x_star


def sup_norm(h: Curve, n_grid: int = 4001) -> float:
    """``sup_{x>=0} |h(x)|`` by grid search and bounded Brent refinement."""
    try:
        limit = abs(h.tail.limit_at_infinity() if isinstance(h, PiecewiseCurve) else h.limit_at_infinity())
    except ValueError:
        raise DivergentIntegral("curve is unbounded or oscillates without decay") from None
    x_star = _tail_horizon(h)
    xs = np.linspace(0.0, x_star, n_grid)
    vals = np.abs(h(xs))
    best = max(float(vals.max()), limit)
    step = xs[1] - xs[0]
    order = np.argsort(vals)[::-1][:8]
    for i in order:
        lo, hi = max(xs[i] - step, 0.0), min(xs[i] + step, x_star)
        res = minimize_scalar(lambda x: -abs(h(x)), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-12})
        best = max(best, -float(res.fun))
    return best


# coordinates in a basis ------------------------------------------------------

def coef_layout(curves: Sequence[ExpPolyCurve]) -> list[tuple[complex, int]]:
    """Shared (rate, power) keys covering every term of ``curves``."""
    rates: list[complex] = []
    degree: list[int] = []
    for h in curves:
        for rate, c in h.terms:
            for i, r in enumerate(rates):
                if abs(r - rate) < RATE_TOL:
                    degree[i] = max(degree[i], c.size - 1)
                    break
            else:
                rates.append(rate)
                degree.append(c.size - 1)
    return [(r, k) for r, deg in zip(rates, degree) for k in range(deg + 1)]


def coef_vector(h: ExpPolyCurve, keys: Sequence[tuple[complex, int]]) -> np.ndarray:
    """Complex coefficients of ``h`` in the key layout."""
    out = np.zeros(len(keys), dtype=complex)
    for rate, c in h.terms:
        hit = False
        for i, (r, k) in enumerate(keys):
            if abs(r - rate) < RATE_TOL and k < c.size:
                out[i] = c[k]
                hit = True
        if not hit:
            raise KeyError("curve has terms outside the layout")
    return out


def _coef_matrix(curves: Sequence[ExpPolyCurve]) -> np.ndarray:
    """Real-stacked coefficient matrix, one column per curve."""
    keys = coef_layout(curves)
    M = np.column_stack([coef_vector(h, keys) for h in curves]) if curves else np.zeros((0, 0))
    return np.vstack([M.real, M.imag])


def _as_exppoly(h: Curve, what: str = "curve") -> ExpPolyCurve:
    if isinstance(h, ExpPolyCurve):
        return h
    raise TypeError(f"{what} must be an ExpPolyCurve")


def rank(curves: Sequence[ExpPolyCurve]) -> int:
    curves = [_as_exppoly(h) for h in curves]
    if not curves:
        return 0
    M = _coef_matrix(curves)
    norms = np.linalg.norm(M, axis=0)
    M = M[:, norms > 0] / norms[norms > 0]
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    return int(np.sum(s > RANK_RTOL * s[0]))


def _lstsq(h: ExpPolyCurve, basis: Sequence[ExpPolyCurve]):
    M = _coef_matrix([*basis, h])
    B, v = M[:, :-1], M[:, -1]
    norms = np.linalg.norm(B, axis=0)
    if np.any(norms == 0):
        raise DependentBasis("basis contains the zero curve")
    Bn = B / norms
    s = np.linalg.svd(Bn, compute_uv=False)
    if s.size < len(basis) or s[-1] <= RANK_RTOL * s[0]:
        raise DependentBasis("basis curves are linearly dependent")
    x, *_ = np.linalg.lstsq(Bn, v, rcond=None)
    x = x / norms
    resid = np.linalg.norm(B @ x - v)
    return x, resid, np.linalg.norm(v)


def coords(h: ExpPolyCurve, basis: Sequence[ExpPolyCurve]) -> np.ndarray:
    """Coordinates of ``h`` in ``basis``; ``NotInSpan`` if outside the span."""
    h = _as_exppoly(h)
    if not basis:
        if h.is_zero():
            return np.zeros(0)
        raise NotInSpan("empty basis")
    x, resid, vnorm = _lstsq(h, basis)
    if resid > SPAN_RTOL * max(vnorm, 1e-300):
        raise NotInSpan(f"relative residual {resid / max(vnorm, 1e-300):.3e}")
    return x


def combine(coefs: Sequence[float], basis: Sequence[Curve]) -> Curve:
    out: Curve = ExpPolyCurve()
    for a, b in zip(coefs, basis):
        out = out + b.scale(float(a))
    return out


def project(h: Curve, basis: Sequence[ExpPolyCurve]) -> tuple[np.ndarray, Curve]:
    """Least-squares coordinates and the explicit residual curve ``h - sum c b``.

    For exp-poly curves the fit is in coefficient space, so the residual is
    exactly zero when ``h`` lies in the span.  For piecewise curves the last
    piece is fitted and the residual keeps every piece.
    """
    if not basis:
        return np.zeros(0), h
    target = h.tail if isinstance(h, PiecewiseCurve) else h
    x, _, _ = _lstsq(target, basis)
    return x, h - combine(x, basis)


def residual_size(h: Curve, beta: float) -> float:
    """H_beta norm when finite, else the largest coefficient modulus."""
    if membership(h, beta).in_H_beta:
        return norm_beta(h, beta)
    return h.max_coeff()


def distance_to_span(h: Curve, basis: Sequence[ExpPolyCurve], beta: float) -> float:
    """H_beta distance from ``h`` to ``span(basis)``.

    Exp-poly curves use the coefficient fit, which is an upper bound that is
    exactly zero on the span.  Piecewise curves use the Gram projection.
    """
    if isinstance(h, ExpPolyCurve):
        _, r = project(h, basis)
        return residual_size(r, beta)
    G = np.array([[inner_beta(a, b, beta) for b in basis] for a in basis])
    rhs = np.array([inner_beta(b, h, beta) for b in basis])
    x = np.linalg.solve(G, rhs)
    return norm_beta(h - combine(x, basis), beta)


def random_curve(rng: np.random.Generator, max_terms: int = 3, max_degree: int = 2,
                 rate_range: tuple[float, float] = (-3.0, -0.8), constant: bool = True,
                 oscillating: bool = True) -> ExpPolyCurve:
    """Random exp-poly curve for tests and experiments."""
    terms = []
    n = int(rng.integers(1, max_terms + 1))
    for _ in range(n):
        re = rng.uniform(*rate_range)
        im = rng.uniform(0.2, 2.0) if oscillating and rng.random() < 0.3 else 0.0
        deg = int(rng.integers(0, max_degree + 1))
        c = rng.normal(size=deg + 1) + (1j * rng.normal(size=deg + 1) if im else 0.0)
        terms.append((complex(re, im), c))
    if constant and rng.random() < 0.5:
        terms.append((0.0, [rng.normal()]))
    return ExpPolyCurve(terms)
