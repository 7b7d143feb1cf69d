"""Initial data: a small library of zero-mean one-particle laws, tensorized
draws, Boltzmann-sphere samplers and the law-of-large-numbers baseline."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from .metrics import (CharacteristicFunction, Estimate, WeightedPointMeasure, assignment_cost,
                      sobolev_neg_norm)
from .model import ParticleState
from .rng import INITIAL, REFERENCE, as_generator, stream

DEGENERATE = 1e-6
MAX_REJECTIONS = 100

NAMES = ("uniform_ball", "trunc_gauss", "two_point", "bimodal", "two_temperature")


def _sphere_monomial_mean(alpha) -> float:
    """Average of u^alpha over the uniform law on S^{d-1}."""
    if any(a % 2 for a in alpha):
        return 0.0
    d = len(alpha)
    b = [(a + 1) / 2 for a in alpha]
    log = sum(special.gammaln(x) for x in b) - special.gammaln(sum(b))
    log += special.gammaln(d / 2) - d / 2 * math.log(math.pi)
    return math.exp(log)


def _gauss_moment(p: int, s: float) -> float:
    if p % 2:
        return 0.0
    return s ** p * float(special.factorial2(p - 1)) if p else 1.0


@dataclass(frozen=True)
class ReferenceDensity:
    """Zero-mean one-particle law addressed by name.

    ``uniform_ball``: uniform on the ball of radius ``R``.
    ``trunc_gauss``: N(0, sigma^2 I) conditioned on ``|v| <= R`` (R may be inf).
    ``two_point``: ``+-a e_1`` with probability 1/2 each.
    ``bimodal``: ``(N(m e_1, s^2 I) + N(-m e_1, s^2 I)) / 2``.
    ``two_temperature``: ``p N(0, s1^2 I) + (1-p) N(0, s2^2 I)``.
    """

    name: str
    d: int = 3
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in NAMES:
            raise ValueError(f"unknown density {self.name!r}; choose from {', '.join(NAMES)}")
        if self.d < 1:
            raise ValueError("dimension must be positive")
        defaults = {"uniform_ball": {"R": 1.0}, "trunc_gauss": {"sigma": 1.0, "R": math.inf},
                    "two_point": {"a": 1.0}, "bimodal": {"m": 1.0, "s": 0.5},
                    "two_temperature": {"p": 0.5, "s1": 0.5, "s2": 2.0}}[self.name]
        unknown = set(self.params) - set(defaults)
        if unknown:
            raise ValueError(f"unknown parameters for {self.name}: {sorted(unknown)}")
        full = {**defaults, **{k: float(v) for k, v in self.params.items()}}
        object.__setattr__(self, "params", full)
        p = full
        if self.name == "two_temperature" and not 0 <= p["p"] <= 1:
            raise ValueError("mixture weight must lie in [0, 1]")
        for key in ("R", "sigma", "s", "s1", "s2"):
            if key in p and not p[key] > 0:
                raise ValueError(f"{key} must be positive")
        if self.name in ("two_point", "bimodal") and p.get("a", p.get("m", 0.0)) < 0:
            raise ValueError("offsets must be nonnegative")

    # ------------------------------------------------------------ closed forms

    @property
    def compact(self) -> bool:
        return self.name in ("uniform_ball", "two_point") or (
            self.name == "trunc_gauss" and math.isfinite(self.params["R"]))

    def abs_moment(self, k: float) -> float:
        """``E |v|^k``."""
        p, d = self.params, self.d
        if self.name == "uniform_ball":
            return d * p["R"] ** k / (d + k)
        if self.name == "two_point":
            return p["a"] ** k
        if self.name == "trunc_gauss":
            s, R = p["sigma"], p["R"]
            base = s ** k * 2 ** (k / 2) * math.exp(special.gammaln((d + k) / 2) - special.gammaln(d / 2))
            if not math.isfinite(R):
                return base
            r2 = (R / s) ** 2
            return base * stats.chi2.cdf(r2, d + k) / stats.chi2.cdf(r2, d)
        if self.name == "two_temperature":
            c = 2 ** (k / 2) * math.exp(special.gammaln((d + k) / 2) - special.gammaln(d / 2))
            return c * (p["p"] * p["s1"] ** k + (1 - p["p"]) * p["s2"] ** k)
        raise NotImplementedError("absolute moments of the bimodal law are only available for even k")

    @property
    def energy(self) -> float:
        """``E |v|^2``."""
        if self.name == "bimodal":
            return self.params["m"] ** 2 + self.d * self.params["s"] ** 2
        return self.abs_moment(2)

    def moment(self, alpha) -> float:
        """``E v^alpha`` for a multi-index alpha."""
        alpha = tuple(int(a) for a in alpha)
        if len(alpha) != self.d:
            raise ValueError("multi-index of the wrong dimension")
        k = sum(alpha)
        p = self.params
        if self.name == "two_point":
            if any(alpha[1:]) or alpha[0] % 2:
                return 0.0
            return p["a"] ** alpha[0]
        if self.name == "bimodal":
            m, s = p["m"], p["s"]
            first = sum(math.comb(alpha[0], j) * m ** j * _gauss_moment(alpha[0] - j, s)
                        for j in range(0, alpha[0] + 1, 2))
            return first * math.prod(_gauss_moment(a, s) for a in alpha[1:])
        return self.abs_moment(k) * _sphere_monomial_mean(alpha)

    def moments(self, k_max: int = 6) -> dict:
        from .model import multi_indices
        return {a: self.moment(a) for a in multi_indices(self.d, k_max)}

    def charfn(self) -> CharacteristicFunction | None:
        p, d = self.params, self.d
        if self.name == "uniform_ball":
            return CharacteristicFunction.uniform_ball(d, p["R"])
        if self.name == "two_point":
            return CharacteristicFunction.two_point(d, p["a"])
        if self.name == "bimodal":
            return CharacteristicFunction.bimodal(d, p["m"], p["s"])
        if self.name == "two_temperature":
            return (p["p"] * CharacteristicFunction.gaussian(d, p["s1"])
                    + (1 - p["p"]) * CharacteristicFunction.gaussian(d, p["s2"]))
        if not math.isfinite(p["R"]):
            return CharacteristicFunction.gaussian(d, p["sigma"])
        return None

    # ------------------------------------------------------------ sampling

    def sample(self, n: int, rng=None) -> np.ndarray:
        rng = as_generator(rng)
        p, d = self.params, self.d
        if self.name == "uniform_ball":
            g = rng.normal(size=(n, d))
            g /= np.linalg.norm(g, axis=1, keepdims=True)
            return g * (p["R"] * rng.random(n) ** (1.0 / d))[:, None]
        if self.name == "two_point":
            out = np.zeros((n, d))
            out[:, 0] = np.where(rng.random(n) < 0.5, p["a"], -p["a"])
            return out
        if self.name == "bimodal":
            out = p["s"] * rng.normal(size=(n, d))
            out[:, 0] += np.where(rng.random(n) < 0.5, p["m"], -p["m"])
            return out
        if self.name == "two_temperature":
            scale = np.where(rng.random(n) < p["p"], p["s1"], p["s2"])
            return scale[:, None] * rng.normal(size=(n, d))
        s, R = p["sigma"], p["R"]
        out = s * rng.normal(size=(n, d))
        if math.isfinite(R):
            bad = np.flatnonzero((out ** 2).sum(axis=1) > R * R)
            while bad.size:
                out[bad] = s * rng.normal(size=(bad.size, d))
                bad = bad[(out[bad] ** 2).sum(axis=1) > R * R]
        return out

    def scaled_to_energy(self, E: float) -> "ReferenceDensity":
        """Same family, dilated so that ``E |v|^2 = E``."""
        lam = math.sqrt(E / self.energy)
        keys = {"uniform_ball": ("R",), "trunc_gauss": ("sigma", "R"), "two_point": ("a",),
                "bimodal": ("m", "s"), "two_temperature": ("s1", "s2")}[self.name]
        new = dict(self.params)
        for k in keys:
            new[k] = new[k] * lam
        return ReferenceDensity(self.name, self.d, new)

    def to_dict(self) -> dict:
        return {"name": self.name, "d": self.d,
                **{k: (v if math.isfinite(v) else "inf") for k, v in self.params.items()}}


def density(name: str, d: int = 3, **params) -> ReferenceDensity:
    return ReferenceDensity(name, d, params)


def sample_tensorized(f0: ReferenceDensity, N: int, rng=None) -> ParticleState:
    """N iid draws from f0."""
    if N < 1:
        raise ValueError("N must be positive")
    return ParticleState(f0.sample(N, rng))


def project_to_sphere(V: np.ndarray, E: float) -> np.ndarray | None:
    """Center and rescale to mean square speed E; None for degenerate draws."""
    V = V - V.mean(axis=0)
    e = math.fsum((V * V).ravel()) / V.shape[0]
    if not e >= DEGENERATE * E:
        return None
    V = V * math.sqrt(E / e)
    # one more centering pass removes the rounding left by the first
    V = V - V.mean(axis=0)
    return V * math.sqrt(E / (math.fsum((V * V).ravel()) / V.shape[0]))


def sample_sphere_conditioned(f0: ReferenceDensity, N: int, E: float | None = None,
                              rng=None) -> ParticleState:
    """Draw from f0^N, remove the empirical mean and rescale onto S^N(E).

    This center-and-rescale map is a surrogate for exact conditioning of
    f0^N on the sphere.
    """
    if N < 2:
        raise ValueError("sphere samplers need N >= 2")
    rng = as_generator(rng)
    E = f0.energy if E is None else float(E)
    if not E > 0:
        raise ValueError("energy must be positive")
    for _ in range(MAX_REJECTIONS):
        V = project_to_sphere(f0.sample(N, rng), E)
        if V is not None:
            return ParticleState(V)
    raise RuntimeError(f"{MAX_REJECTIONS} consecutive degenerate draws from {f0.name}")


def sample_uniform_sphere(N: int, E: float, d: int = 3, rng=None) -> ParticleState:
    """Uniform law on S^N(E) via a projected and rescaled Gaussian vector."""
    if N < 2:
        raise ValueError("sphere samplers need N >= 2")
    rng = as_generator(rng)
    while True:
        V = project_to_sphere(rng.normal(size=(N, d)), E)
        if V is not None:
            return ParticleState(V)


def chaos_baseline(f0: ReferenceDensity, N: int, M: int, metric: str = "w1", master_seed: int = 0,
                   s: float = 1.0) -> Estimate:
    """Monte Carlo estimate of ``E D(mu^N, f0)`` over M independent runs.

    ``metric="w1"``: W1 between ``mu^N`` and an independent f0 cloud of size N.
    ``metric="hdot"``: squared negative Sobolev norm of ``mu^N - f0``,
    computed against the characteristic function of f0.
    """
    vals = np.empty(M)
    cf = f0.charfn() if metric == "hdot" else None
    if metric == "hdot" and cf is None:
        raise ValueError(f"no characteristic function for {f0.name}")
    if metric not in ("w1", "hdot"):
        raise ValueError(f"unknown metric {metric!r}")
    for r in range(M):
        x = f0.sample(N, stream(master_seed, r, INITIAL))
        if metric == "w1":
            y = f0.sample(N, stream(master_seed, r, REFERENCE))
            vals[r] = assignment_cost(x, y, 1)
        else:
            h = CharacteristicFunction.points(WeightedPointMeasure.empirical(x)) - cf
            vals[r] = sobolev_neg_norm(h, s) ** 2
    return Estimate(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(M)) if M > 1 else math.nan)
