"""Distances between measures on R^d.

Conventions: the Fourier transform is ``h^(xi) = int exp(-i x.xi) dh(x)``;
``|h|_s = sup |h^(xi)| / |xi|^s``; the homogeneous negative Sobolev norm is
``||h||^2 = int |h^(xi)|^2 |xi|^(-2s) dxi`` without a ``(2 pi)^-d`` factor.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy import integrate, optimize, special
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist, pdist

from .model import multi_indices, sphere_area, unit_ball_volume

MOMENT_TOL = 1e-10
ASSIGNMENT_MAX = 2000


class Estimate(NamedTuple):
    value: float
    stderr: float


class QuadratureError(RuntimeError):
    pass


# ---------------------------------------------------------------- measures

@dataclass(frozen=True)
class WeightedPointMeasure:
    """Finite signed measure ``sum_i w_i delta_{x_i}``."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.points, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if x.ndim != 2 or x.shape[0] != w.shape[0]:
            raise ValueError("points (n, d) and weights (n,) do not match")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(w))):
            raise ValueError("atoms and weights must be finite")
        object.__setattr__(self, "points", np.ascontiguousarray(x))
        object.__setattr__(self, "weights", w)

    @classmethod
    def empirical(cls, points) -> "WeightedPointMeasure":
        x = np.asarray(points, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        n = x.shape[0]
        return cls(x, np.full(n, 1.0 / n))

    @classmethod
    def zero(cls, d: int) -> "WeightedPointMeasure":
        return cls(np.zeros((0, d)), np.zeros(0))

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def total_weight(self) -> float:
        return math.fsum(self.weights)

    def is_probability(self, tol: float = 1e-12) -> bool:
        return bool(np.all(self.weights >= 0)) and abs(self.total_weight - 1.0) <= tol

    def moment(self, alpha) -> float:
        alpha = tuple(int(a) for a in alpha)
        mono = np.prod(self.points ** np.array(alpha, dtype=float), axis=1) if self.size else np.zeros(0)
        return math.fsum(self.weights * mono)

    def abs_moment(self, k: float, bracket: bool = True) -> float:
        """``int <v>^k d|h|`` (or ``|v|^k`` when ``bracket`` is False)."""
        r2 = (self.points ** 2).sum(axis=1)
        base = np.sqrt(1.0 + r2) if bracket else np.sqrt(r2)
        return math.fsum(np.abs(self.weights) * base ** k)

    def __neg__(self):
        return WeightedPointMeasure(self.points, -self.weights)

    def __sub__(self, other: "WeightedPointMeasure") -> "WeightedPointMeasure":
        if other.d != self.d:
            raise ValueError("dimension mismatch")
        return WeightedPointMeasure(np.vstack([self.points, other.points]),
                                    np.concatenate([self.weights, -other.weights]))

    def __add__(self, other: "WeightedPointMeasure") -> "WeightedPointMeasure":
        return self - (-other)

    def scaled(self, c: float) -> "WeightedPointMeasure":
        return WeightedPointMeasure(self.points, c * self.weights)

    def translated(self, shift) -> "WeightedPointMeasure":
        return WeightedPointMeasure(self.points + np.asarray(shift, dtype=float), self.weights)

    def transform(self, xi: np.ndarray, chunk: int = 4096) -> np.ndarray:
        """Exact Fourier transform at the rows of ``xi`` (shape (m, d))."""
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        out = np.empty(xi.shape[0], dtype=complex)
        if self.size == 0:
            out[:] = 0.0
            return out
        for a in range(0, xi.shape[0], chunk):
            phase = xi[a:a + chunk] @ self.points.T
            out[a:a + chunk] = np.cos(phase) @ self.weights - 1j * (np.sin(phase) @ self.weights)
        return out


def _as_measure(h) -> WeightedPointMeasure:
    if isinstance(h, WeightedPointMeasure):
        return h
    raise TypeError("expected a WeightedPointMeasure")


# ---------------------------------------------------------------- characteristic functions

@dataclass(frozen=True)
class CharacteristicFunction:
    """Fourier transform of a finite measure, given as a sum of terms.

    Each term is ``(coefficient, tag, params)``; tags are ``gaussian``,
    ``two_point``, ``uniform_ball``, ``points`` and ``grid``.
    """

    d: int
    terms: tuple

    @classmethod
    def gaussian(cls, d: int, sigma: float = 1.0) -> "CharacteristicFunction":
        return cls(d, ((1.0, "gaussian", (float(sigma),)),))

    @classmethod
    def two_point(cls, d: int, a: float) -> "CharacteristicFunction":
        return cls(d, ((1.0, "two_point", (float(a),)),))

    @classmethod
    def uniform_ball(cls, d: int, radius: float) -> "CharacteristicFunction":
        return cls(d, ((1.0, "uniform_ball", (float(radius),)),))

    @classmethod
    def bimodal(cls, d: int, m: float, s: float) -> "CharacteristicFunction":
        return cls(d, ((1.0, "bimodal", (float(m), float(s))),))

    @classmethod
    def points(cls, mu: WeightedPointMeasure) -> "CharacteristicFunction":
        return cls(mu.d, ((1.0, "points", mu),))

    @classmethod
    def grid(cls, d: int, evaluator: Callable[[np.ndarray], np.ndarray]) -> "CharacteristicFunction":
        """Custom evaluator; ``evaluator(xi)`` takes an (m, d) array."""
        return cls(d, ((1.0, "grid", evaluator),))

    def __mul__(self, c: float) -> "CharacteristicFunction":
        return CharacteristicFunction(self.d, tuple((c * a, t, p) for a, t, p in self.terms))

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __add__(self, other) -> "CharacteristicFunction":
        other = _as_cf(other)
        if other.d != self.d:
            raise ValueError("dimension mismatch")
        return CharacteristicFunction(self.d, self.terms + other.terms)

    def __sub__(self, other) -> "CharacteristicFunction":
        return self + (-_as_cf(other))

    @property
    def mass(self) -> float:
        return float(np.real(self(np.zeros((1, self.d)))[0]))

    def __call__(self, xi) -> np.ndarray:
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        if xi.shape[1] != self.d:
            raise ValueError("xi has the wrong dimension")
        r = np.sqrt((xi ** 2).sum(axis=1))
        out = np.zeros(xi.shape[0], dtype=complex)
        for a, tag, p in self.terms:
            if tag == "gaussian":
                out += a * np.exp(-0.5 * (p[0] * r) ** 2)
            elif tag == "two_point":
                out += a * np.cos(p[0] * xi[:, 0])
            elif tag == "bimodal":
                out += a * np.cos(p[0] * xi[:, 0]) * np.exp(-0.5 * (p[1] * r) ** 2)
            elif tag == "uniform_ball":
                out += a * _ball_transform(self.d, p[0] * r)
            elif tag == "points":
                out += a * p.transform(xi)
            else:
                out += a * np.asarray(p(xi), dtype=complex)
        return out

    def has_potentials(self) -> bool:
        return all(t in ("gaussian", "points", "two_point") for _, t, _ in self.terms)

    def point_part(self) -> WeightedPointMeasure | None:
        """All atomic terms merged, or None when there are none."""
        parts = [p.scaled(a) for a, t, p in self.terms if t == "points"]
        for a, t, p in self.terms:
            if t == "two_point":
                e = np.zeros((2, self.d))
                e[0, 0], e[1, 0] = p[0], -p[0]
                parts.append(WeightedPointMeasure(e, np.array([0.5 * a, 0.5 * a])))
        if not parts:
            return None
        out = parts[0]
        for q in parts[1:]:
            out = out + q
        return out


def _as_cf(h) -> CharacteristicFunction:
    if isinstance(h, CharacteristicFunction):
        return h
    if isinstance(h, WeightedPointMeasure):
        return CharacteristicFunction.points(h)
    raise TypeError("expected a measure or a characteristic function")


def _ball_transform(d: int, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.ones_like(x)
    big = x > 1e-4
    nu = d / 2.0
    out[big] = special.gamma(nu + 1) * (2.0 / x[big]) ** nu * special.jv(nu, x[big])
    small = ~big
    out[small] = 1.0 - x[small] ** 2 / (2.0 * (d + 2))
    return out


# ---------------------------------------------------------------- Wasserstein

def _quantile_wasserstein(x, wx, y, wy, q):
    ix = np.argsort(x, kind="stable")
    iy = np.argsort(y, kind="stable")
    x, wx = x[ix], wx[ix]
    y, wy = y[iy], wy[iy]
    cx = np.cumsum(wx)
    cy = np.cumsum(wy)
    cx[-1] = cy[-1] = 1.0
    grid = np.union1d(cx, cy)
    du = np.diff(np.concatenate([[0.0], grid]))
    # the quantile at the right end of each slice
    qx = x[np.minimum(np.searchsorted(cx, grid - 0.5 * du, side="left"), x.size - 1)]
    qy = y[np.minimum(np.searchsorted(cy, grid - 0.5 * du, side="left"), y.size - 1)]
    return math.fsum(du * np.abs(qx - qy) ** q) ** (1.0 / q)


def wasserstein_empirical(mu: WeightedPointMeasure, nu: WeightedPointMeasure, q: float = 1) -> float:
    """W_q between two probability point measures.

    In d=1 any weights are allowed (quantile coupling). In d>=2 the clouds
    must be equal-size and uniformly weighted (exact assignment).
    """
    if q < 1:
        raise ValueError("q must be >= 1")
    if mu.d != nu.d:
        raise ValueError("dimension mismatch")
    for m in (mu, nu):
        if not m.is_probability(1e-9):
            raise ValueError("Wasserstein distances need probability measures")
    if mu.d == 1:
        return _quantile_wasserstein(mu.points[:, 0], mu.weights, nu.points[:, 0], nu.weights, q)
    n = mu.size
    if nu.size != n:
        raise ValueError("clouds of unequal sizes; resample both to a common size first")
    if not (np.allclose(mu.weights, 1.0 / n) and np.allclose(nu.weights, 1.0 / n)):
        raise ValueError("assignment needs uniformly weighted clouds")
    if n > ASSIGNMENT_MAX:
        raise ValueError(f"assignment limited to {ASSIGNMENT_MAX} points; subsample first")
    return assignment_cost(mu.points, nu.points, q)


def assignment_cost(x: np.ndarray, y: np.ndarray, q: float = 1) -> float:
    """``min_perm ((1/n) sum |x_i - y_perm(i)|^q)^(1/q)`` for equal-size clouds."""
    if x.shape[1] == 1:
        a = np.sort(x[:, 0])
        b = np.sort(y[:, 0])
        return math.fsum(np.abs(a - b) ** q / a.size) ** (1.0 / q)
    cost = cdist(x, y)
    if q != 1:
        cost = cost ** q
    r, c = linear_sum_assignment(cost)
    return (math.fsum(cost[r, c]) / x.shape[0]) ** (1.0 / q)


# ---------------------------------------------------------------- Fourier sup norms

@lru_cache(maxsize=8)
def _directions(d: int) -> np.ndarray:
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        a = np.linspace(0, math.pi, 64, endpoint=False)
        return np.column_stack([np.cos(a), np.sin(a)])
    if d == 3:
        x, _ = integrate.lebedev_rule(17)
        return x.T.copy()
    g = np.random.default_rng(12345).normal(size=(40 * d, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


_RADII = np.logspace(-3, 3, 241)


def _check_fourier_constraints(h, s):
    if isinstance(h, WeightedPointMeasure):
        d = h.d
        scale = max(1.0, float(np.abs(h.weights).sum()))
        if abs(h.total_weight) > MOMENT_TOL * scale:
            raise ValueError("Fourier norm needs a zero-mass measure")
        if s > 1:
            rad = max(1.0, float(np.abs(h.points).max(initial=0.0)))
            for k in range(d):
                e = [0] * d
                e[k] = 1
                if abs(h.moment(e)) > MOMENT_TOL * scale * rad:
                    raise ValueError("for s > 1 the measure needs zero first moments")
    else:
        if abs(h.mass) > MOMENT_TOL:
            raise ValueError("Fourier norm needs a zero-mass measure")


def _candidate_directions(h, d):
    base = _directions(d)
    if d == 1 or not isinstance(h, WeightedPointMeasure) or h.size == 0:
        return base
    x = h.points
    nrm = np.linalg.norm(x, axis=1)
    keep = x[nrm > 1e-12][:32] / nrm[nrm > 1e-12][:32, None]
    w = h.weights[:, None] * x
    m = w.sum(axis=0)
    extra = [keep]
    if np.linalg.norm(m) > 0:
        extra.append((m / np.linalg.norm(m))[None, :])
    return np.vstack([base] + extra)


def fourier_sup(h, s_values: Sequence[float], refine: bool = True) -> np.ndarray:
    """``sup |h^(xi)| / |xi|^s`` for each ``s`` (no constraint checks)."""
    evaluate = h.transform if isinstance(h, WeightedPointMeasure) else h
    d = h.d
    dirs = _candidate_directions(h, d)
    xi = (_RADII[:, None, None] * dirs[None, :, :]).reshape(-1, d)
    amp = np.abs(evaluate(xi)).reshape(_RADII.size, dirs.shape[0])
    out = []
    for s in s_values:
        ratio = amp / _RADII[:, None] ** s
        flat = np.argmax(ratio)
        best = float(ratio.flat[flat])
        if refine and best > 0:
            best = max(best, _refine(evaluate, ratio, dirs, s, d))
        out.append(best)
    return np.array(out)


def _refine(evaluate, ratio, dirs, s, d):
    best = 0.0
    order = np.argsort(ratio, axis=None)[::-1][:3]
    for flat in order:
        ir, idir = np.unravel_index(flat, ratio.shape)
        u = dirs[idir]
        lo = math.log(_RADII[max(ir - 1, 0)])
        hi = math.log(_RADII[min(ir + 1, _RADII.size - 1)])

        def neg(t, u=u):
            r = math.exp(t)
            return -abs(evaluate((r * u)[None, :])[0]) / r ** s

        res = optimize.minimize_scalar(neg, bounds=(lo, hi), method="bounded",
                                       options={"xatol": 1e-10})
        val = -res.fun
        if d > 1:
            x0 = math.exp(res.x) * u

            def negv(z):
                r = float(np.linalg.norm(z))
                if r == 0:
                    return 0.0
                return -abs(evaluate(z[None, :])[0]) / r ** s

            res2 = optimize.minimize(negv, x0, method="Nelder-Mead",
                                     options={"xatol": 1e-9, "fatol": 1e-14, "maxiter": 400})
            val = max(val, -res2.fun)
        best = max(best, val)
    return best


def fourier_norm(h, s: float, refine: bool = True) -> float:
    """``|h|_s = sup_xi |h^(xi)| / |xi|^s`` for a zero-mass measure.

    Evaluated on a log-spaced radial grid over ``[1e-3, 1e3]`` times a set of
    directions, then refined around the largest grid values. The result is
    a lower bound of the true supremum.
    """
    if not (0 < s <= 2):
        raise ValueError("s must lie in (0, 2]")
    _check_fourier_constraints(h, s)
    if isinstance(h, WeightedPointMeasure) and h.size == 0:
        return 0.0
    return float(fourier_sup(h, [s], refine)[0])


# ---------------------------------------------------------------- mollified compensator

def _psi(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    m = np.abs(t) < 1
    out[m] = np.exp(-1.0 / (1.0 - t[m] ** 2))
    return out


@lru_cache(maxsize=1)
def _chi_table():
    t = np.linspace(-1, 1, 4001)
    c = integrate.cumulative_simpson(_psi(t), x=t, initial=0.0)
    return t, c / c[-1]


def cutoff(r):
    """Smooth radial cutoff: 1 on [0, 1], 0 beyond 2."""
    t, c = _chi_table()
    r = np.asarray(r, dtype=float)
    return 1.0 - np.interp(2.0 * (r - 1.0) - 1.0, t, c, left=0.0, right=1.0)


@lru_cache(maxsize=1)
def cutoff_lipschitz() -> float:
    total, _ = integrate.quad(lambda x: float(_psi(x)), -1, 1)
    return 2.0 * math.exp(-1.0) / total


def compensator_transform(h: WeightedPointMeasure, k: int) -> Callable[[np.ndarray], np.ndarray]:
    """Fourier transform of the mollified Taylor compensator of order k."""
    alphas = multi_indices(h.d, k - 1)
    coef = []
    for a in alphas:
        m = h.moment(a)
        fact = math.prod(math.factorial(x) for x in a)
        coef.append((a, m * (-1j) ** sum(a) / fact))

    def ev(xi):
        xi = np.atleast_2d(xi)
        poly = np.zeros(xi.shape[0], dtype=complex)
        for a, c in coef:
            poly += c * np.prod(xi ** np.array(a, dtype=float), axis=1)
        return cutoff(np.linalg.norm(xi, axis=1)) * poly

    return ev


def toscani_modified_norm(h: WeightedPointMeasure, k: int) -> float:
    """``|h - M_k[h]|_k + sum_{|a|<=k-1} |M_a[h]|`` with a mollified compensator."""
    if k < 1:
        raise ValueError("k must be >= 1")
    h = _as_measure(h)
    if h.size == 0:
        return 0.0
    comp = compensator_transform(h, k)
    resid = CharacteristicFunction.points(h) - CharacteristicFunction.grid(h.d, comp)
    sup = float(fourier_sup(resid, [k])[0])
    return sup + math.fsum(abs(h.moment(a)) for a in multi_indices(h.d, k - 1))


# ---------------------------------------------------------------- negative Sobolev norms

def riesz_constant(d: int, alpha: float) -> float:
    """C with ``int |h^|^2 |xi|^(-d-alpha) = -C sum w_i w_j |x_i - x_j|^alpha``."""
    return (2.0 * math.pi ** (d / 2) * special.gamma(1 - alpha / 2)
            / (alpha * 2 ** alpha * special.gamma((d + alpha) / 2)))


def gaussian_potential(x: np.ndarray, sigma: float, alpha: float) -> np.ndarray:
    """``E |x - Y|^alpha`` for ``Y ~ N(0, sigma^2 I)``; x is (n, d)."""
    x = np.atleast_2d(x)
    d = x.shape[1]
    lam = (x ** 2).sum(axis=1) / sigma ** 2
    c = sigma ** alpha * 2 ** (alpha / 2) * special.gamma((d + alpha) / 2) / special.gamma(d / 2)
    return c * special.hyp1f1(-alpha / 2, d / 2, -lam / 2)


def gaussian_self_potential(d: int, sigma: float, alpha: float) -> float:
    return float(gaussian_potential(np.zeros((1, d)), math.sqrt(2) * sigma, alpha)[0])


def _check_sobolev_constraints(h, s, d):
    if s <= d / 2:
        raise ValueError("s must exceed d/2")
    if isinstance(h, WeightedPointMeasure):
        scale = max(1.0, float(np.abs(h.weights).sum()))
        mass = h.total_weight
        means = [h.moment(tuple(int(i == k) for i in range(d))) for k in range(d)]
    else:
        scale = 1.0
        mass = h.mass
        means = None
    if abs(mass) > MOMENT_TOL * scale:
        raise ValueError("negative Sobolev norm needs a zero-mass measure")
    if s >= d / 2 + 1:
        if means is None:
            pp = h.point_part()
            if pp is None:
                return
            means = [pp.moment(tuple(int(i == k) for i in range(d))) for k in range(d)]
        if max(abs(m) for m in means) > MOMENT_TOL * scale:
            raise ValueError("for s >= d/2 + 1 the measure also needs zero mean")
    if s >= d / 2 + 2:
        raise ValueError("s must be below d/2 + 2")


def _closed_form_square(h, s) -> float:
    d = h.d
    alpha = 2 * s - d
    C = riesz_constant(d, alpha)
    if isinstance(h, WeightedPointMeasure):
        pts = [(h, None)]
        smooth = []
    else:
        pp = h.point_part()
        pts = [(pp, None)] if pp is not None else []
        smooth = [(a, p[0]) for a, t, p in h.terms if t == "gaussian"]
    total = 0.0
    parts = []
    if pts and pts[0][0] is not None and pts[0][0].size:
        mu = pts[0][0]
        w = mu.weights
        if mu.size > 1:
            D = pdist(mu.points) ** alpha
            iu = np.triu_indices(mu.size, 1)
            parts.append(2.0 * math.fsum(w[iu[0]] * w[iu[1]] * D))
        for a, sig in smooth:
            parts.append(2.0 * a * math.fsum(w * gaussian_potential(mu.points, sig, alpha)))
    for i, (a, si) in enumerate(smooth):
        for j, (b, sj) in enumerate(smooth):
            sig = math.sqrt(0.5 * (si ** 2 + sj ** 2))
            parts.append(a * b * gaussian_self_potential(d, sig, alpha))
    total = math.fsum(parts)
    return max(-C * total, 0.0)


def _sphere_rule(d):
    if d == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    if d == 2:
        a = np.linspace(0, 2 * math.pi, 128, endpoint=False)
        return np.column_stack([np.cos(a), np.sin(a)]), np.full(128, 2 * math.pi / 128)
    if d == 3:
        x, w = integrate.lebedev_rule(41)
        return x.T.copy(), w
    raise ValueError("quadrature route supports d <= 3")


def _radial_panels(width: float, r_max: float, per_decade: int):
    edges = list(np.logspace(-8, 0, 8 * per_decade + 1))
    r = 1.0
    while r < r_max:
        r = min(r + width, r_max)
        edges.append(r)
    return np.array(edges)


def _quadrature_square(h: CharacteristicFunction, s, r_max, per_decade, nodes=16) -> float:
    d = h.d
    dirs, dw = _sphere_rule(d)
    pp = h.point_part()
    diam = 0.0
    if pp is not None and pp.size > 1:
        diam = float(np.ptp(pp.points, axis=0).max())
    width = min(1.0, math.pi / max(diam, 1e-12)) / (per_decade / 10)
    edges = _radial_panels(width, r_max, per_decade)
    gx, gw = np.polynomial.legendre.leggauss(nodes)
    a, b = edges[:-1], edges[1:]
    r = (0.5 * (b - a)[:, None] * (gx[None, :] + 1) + a[:, None]).ravel()
    wr = (0.5 * (b - a)[:, None] * gw[None, :]).ravel()
    total = 0.0
    chunk = max(1, 200000 // dirs.shape[0])
    for i in range(0, r.size, chunk):
        rr = r[i:i + chunk]
        xi = (rr[:, None, None] * dirs[None]).reshape(-1, d)
        amp2 = (np.abs(h(xi)) ** 2).reshape(rr.size, dirs.shape[0]) @ dw
        total += math.fsum(wr[i:i + chunk] * rr ** (d - 1 - 2 * s) * amp2)
    if pp is not None:
        # beyond r_max only the atoms contribute, on average sum w_i^2
        total += sphere_area(d) * float((pp.weights ** 2).sum()) * r_max ** (d - 2 * s) / (2 * s - d)
    return total


def sobolev_neg_norm(h, s: float, method: str = "auto", tol: float = 1e-8,
                     r_max: float = 1e3) -> float:
    """Homogeneous negative Sobolev norm ``(int |h^|^2 |xi|^(-2s))^(1/2)``.

    ``method="closed"`` uses the Riesz-potential identity (atoms and
    Gaussians only); ``"quadrature"`` integrates in Fourier space and raises
    QuadratureError when two resolutions disagree by more than ``tol``.
    """
    d = h.d
    _check_sobolev_constraints(h, s, d)
    if isinstance(h, WeightedPointMeasure) and h.size == 0:
        return 0.0
    closed_ok = abs(2 * s - d - 2) > 1e-12 and (isinstance(h, WeightedPointMeasure) or h.has_potentials())
    if method == "auto":
        method = "closed" if closed_ok else "quadrature"
    if method == "closed":
        if not closed_ok:
            raise ValueError("no closed form for this measure")
        return math.sqrt(_closed_form_square(h, s))
    if method != "quadrature":
        raise ValueError(f"unknown method {method!r}")
    cf = _as_cf(h)
    coarse = _quadrature_square(cf, s, r_max, 10)
    fine = _quadrature_square(cf, s, r_max, 20)
    if abs(fine - coarse) > tol * max(abs(fine), 1e-300):
        raise QuadratureError(f"radial quadrature did not converge ({coarse!r} vs {fine!r})")
    return math.sqrt(max(fine, 0.0))


# ---------------------------------------------------------------- comparison inequalities

@dataclass(frozen=True)
class InequalityRow:
    item: str
    lhs: float
    rhs: float

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    def passed(self, tol: float = 1e-12) -> bool:
        return self.lhs <= self.rhs + tol * max(1.0, abs(self.rhs))

    def as_dict(self, tol: float = 1e-12) -> dict:
        return {"item": self.item, "lhs": self.lhs, "rhs": self.rhs, "slack": self.slack,
                "pass": self.passed(tol)}


def _gauss_abs_mean(d: int) -> float:
    return math.sqrt(2.0) * math.exp(special.gammaln((d + 1) / 2) - special.gammaln(d / 2))


def bound_iii(d: int, s: float, fourier1: float) -> float:
    c = 8.0 * sphere_area(d) / (2 * s - d)
    return c * ((2 * s - d) / (4 * (d + 2 - 2 * s))) ** (s - d / 2) * fourier1 ** (2 * s - d)


def _minimize_bound(fn) -> float:
    """Minimize ``fn(eps, R)`` over positive eps, R (log-parametrized)."""
    def safe(z):
        try:
            return fn(math.exp(z[0]), math.exp(z[1]))
        except (OverflowError, ZeroDivisionError):
            return math.inf

    best = math.inf
    x0s = [(a, b) for a in (-6.0, -2.0, 0.0) for b in (-1.0, 1.0, 3.0)]
    for x0 in x0s:
        res = optimize.minimize(safe, np.array(x0),
                                method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-14,
                                                               "maxiter": 2000})
        best = min(best, float(res.fun))
    return best


def bound_iv(d: int, s: float, k: float, moment: float, fourier_s: float) -> float:
    """Materialized right side of the W1 vs |.|_s estimate (mollifier chain)."""
    if fourier_s == 0:
        return 0.0  # the infimum is approached as eps -> 0, R -> inf
    L = cutoff_lipschitz()
    md = _gauss_abs_mean(d)
    grad_l1 = (1 + 2 * L) * unit_ball_volume(d) * 2 ** d
    gint = sphere_area(d) * 2 ** ((s + d - 3) / 2) * special.gamma((s + d - 1) / 2)

    def fn(eps, R):
        return (2 * moment / R ** k + 2 * (1 + 2 * L) * md * eps
                + (2 * math.pi) ** (-d) * grad_l1 * R ** d * fourier_s * gint * eps ** (-(s + d - 1)))

    return _minimize_bound(fn)


def bound_v(d: int, s: float, k: float, moment: float, sobolev: float) -> float:
    """Materialized right side of the W1 vs negative Sobolev estimate."""
    if sobolev == 0:
        return 0.0  # the infimum is approached as eps -> 0, R -> inf
    L = cutoff_lipschitz()
    md = _gauss_abs_mean(d)
    grad_l2 = (1 + 2 * L) * math.sqrt(unit_ball_volume(d) * 2 ** d)
    peak = ((s - 1) / math.e) ** ((s - 1) / 2)

    def fn(eps, R):
        return (2 * moment / R ** k + 2 * (1 + 2 * L) * md * eps
                + (2 * math.pi) ** (-d / 2) * grad_l2 * R ** (d / 2) * peak * eps ** (1 - s) * sobolev)

    return _minimize_bound(fn)


def default_s_iii(d: int) -> float:
    return d / 2 + 0.25


def default_s_v(d: int) -> float:
    return 1.25 if d == 1 else max(d / 2, 1.0) + 0.25


def check_comparisons(f: WeightedPointMeasure, g: WeightedPointMeasure,
                      items: Sequence[str] = ("i", "ii", "iii", "v"), q: float = 2.0,
                      ks: Sequence[float] = (1.0, 2.0), s_ii: Sequence[float] = (0.5, 1.0),
                      s_iii: float | None = None, s_v: float | None = None,
                      k_v: float = 2.0) -> list[InequalityRow]:
    """Evaluate both sides of the distance comparison inequalities."""
    d = f.d
    rows: list[InequalityRow] = []
    w1 = wasserstein_empirical(f, g, 1)
    h = f - g
    s_iii = default_s_iii(d) if s_iii is None else s_iii
    s_v = default_s_v(d) if s_v is None else s_v
    need_sup = sorted({*s_ii, 1.0})
    sups = dict(zip(need_sup, fourier_sup(h, need_sup))) if h.size else {s: 0.0 for s in need_sup}
    if "i" in items:
        wq = wasserstein_empirical(f, g, q)
        rows.append(InequalityRow("i:W1<=Wq", w1, wq))
        for k in ks:
            if k < q - 1:
                continue
            M = max(f.abs_moment(k + 1), g.abs_moment(k + 1))
            rhs = 2 ** ((k + 1) / q) * M ** ((q - 1) / (q * k)) * w1 ** ((1 / q) * (1 - (q - 1) / k))
            rows.append(InequalityRow(f"i:Wq<=interp(k={k:g})", wq, rhs))
    if "ii" in items:
        for s in s_ii:
            rows.append(InequalityRow(f"ii:s={s:g}", float(sups[s]), 2 ** (1 - s) * w1 ** s))
    if "iii" in items:
        lhs = sobolev_neg_norm(h, s_iii) ** 2
        rows.append(InequalityRow(f"iii:s={s_iii:g}", lhs, bound_iii(d, s_iii, float(sups[1.0]))))
    if "iv" in items:
        M = max(f.abs_moment(k_v + 1), g.abs_moment(k_v + 1))
        rows.append(InequalityRow(f"iv:s=1,k={k_v:g}", w1, bound_iv(d, 1.0, k_v, M, float(sups[1.0]))))
    if "v" in items:
        M = max(f.abs_moment(k_v + 1), g.abs_moment(k_v + 1))
        H = sobolev_neg_norm(h, s_v)
        rows.append(InequalityRow(f"v:s={s_v:g},k={k_v:g}", w1, bound_v(d, s_v, k_v, M, H)))
    return rows
