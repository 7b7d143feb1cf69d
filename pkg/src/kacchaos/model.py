"""Velocities, particle states, collision kernels and the pair-collision map.

Velocities are plain ``float64`` numpy arrays.  A state of ``N`` particles in
dimension ``d`` is an ``(N, d)`` C-contiguous array, i.e. a flat block of
``d*N`` reals.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import integrate, special

from . import _kernels
from .rng import as_generator

EPS = np.finfo(float).eps
SIGMA_TOL = 1e-12


def sphere_area(d: int) -> float:
    """Surface measure of the unit sphere S^{d-1} in R^d."""
    return 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)


def _fsum_energy(v: np.ndarray) -> float:
    return math.fsum((v * v).ravel()) / v.shape[0]


@dataclass(frozen=True)
class ParticleState:
    """Velocities of ``n`` particles with cached mean energy and momentum."""

    velocities: np.ndarray
    time: float = 0.0
    energy: float = field(init=False)
    momentum: np.ndarray = field(init=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.velocities, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] < 1:
            raise ValueError("velocities must have shape (N, d)")
        if not np.all(np.isfinite(v)):
            raise ValueError("velocities must be finite")
        object.__setattr__(self, "velocities", v)
        object.__setattr__(self, "energy", _fsum_energy(v))
        mom = np.array([math.fsum(v[:, k]) for k in range(v.shape[1])]) / v.shape[0]
        object.__setattr__(self, "momentum", mom)

    @property
    def n(self) -> int:
        return self.velocities.shape[0]

    @property
    def d(self) -> int:
        return self.velocities.shape[1]

    def copy(self, time: float | None = None) -> "ParticleState":
        return ParticleState(self.velocities.copy(), self.time if time is None else time)

    def on_sphere(self, constraint: "SphereConstraint", rtol: float = 1e-9) -> bool:
        return constraint.contains(self, rtol)


@dataclass(frozen=True)
class SphereConstraint:
    """The Boltzmann sphere: mean square speed ``energy``, zero mean velocity."""

    energy: float
    d: int = 3

    def __post_init__(self):
        if not self.energy > 0:
            raise ValueError("sphere energy must be positive")

    @property
    def momentum(self) -> np.ndarray:
        return np.zeros(self.d)

    def contains(self, state: ParticleState, rtol: float = 1e-9) -> bool:
        scale = math.sqrt(self.energy)
        return (abs(state.energy - self.energy) <= rtol * self.energy
                and float(np.max(np.abs(state.momentum))) <= rtol * scale)


@dataclass(frozen=True)
class CollisionKernel:
    """``B = Gamma(|v - w|) b(cos theta)`` restricted to theta in [0, pi/2].

    variant ``"gmm"``: Gamma = 1, b = 1.
    variant ``"hs"``: Gamma(z) = speed_coefficient * z, b = 1.
    variant ``"tmm"``: Gamma = 1, b = strength * theta**(-2 - nu) on [cutoff, pi/2].
    """

    variant: str
    d: int = 3
    cutoff: float | None = None
    nu: float = 0.5
    strength: float = 1.0
    speed_coefficient: float = 1.0

    def __post_init__(self):
        if self.variant not in ("gmm", "tmm", "hs"):
            raise ValueError(f"unknown kernel variant {self.variant!r}")
        if self.d < 2:
            raise ValueError("collision kernels need d >= 2")
        if self.variant == "tmm":
            if self.cutoff is None or not (0 < self.cutoff < math.pi / 2):
                raise ValueError("tmm needs a cutoff angle in (0, pi/2)")
            if self.strength <= 0:
                raise ValueError("tmm strength must be positive")
        if self.variant == "hs" and self.speed_coefficient <= 0:
            raise ValueError("hs speed coefficient must be positive")

    @classmethod
    def gmm(cls, d: int = 3) -> "CollisionKernel":
        return cls("gmm", d)

    @classmethod
    def hs(cls, d: int = 3, speed_coefficient: float = 1.0) -> "CollisionKernel":
        return cls("hs", d, speed_coefficient=speed_coefficient)

    @classmethod
    def tmm(cls, cutoff: float, d: int = 3, strength: float = 1.0, nu: float = 0.5) -> "CollisionKernel":
        return cls("tmm", d, cutoff=cutoff, strength=strength, nu=nu)

    @property
    def kind(self) -> int:
        return {"gmm": _kernels.GMM, "tmm": _kernels.TMM, "hs": _kernels.HS}[self.variant]

    @property
    def maxwellian(self) -> bool:
        return self.variant != "hs"

    @property
    def theta_min(self) -> float:
        return self.cutoff if self.variant == "tmm" else 0.0

    def b(self, theta):
        """Angular density as a function of the deviation angle."""
        theta = np.asarray(theta, dtype=float)
        inside = (theta >= self.theta_min) & (theta <= math.pi / 2)
        if self.variant == "tmm":
            with np.errstate(divide="ignore"):
                val = self.strength * theta ** (-2.0 - self.nu)
        else:
            val = np.ones_like(theta)
        return np.where(inside, val, 0.0)

    def gamma(self, z):
        z = np.asarray(z, dtype=float)
        if self.variant == "hs":
            return self.speed_coefficient * z
        return np.ones_like(z)

    def theta_density(self, theta):
        """Density of theta on [theta_min, pi/2], unnormalized: b sin^{d-2}."""
        return self.b(theta) * np.sin(theta) ** (self.d - 2)

    @cached_property
    def angular_mass(self) -> float:
        """Total angular mass of b over the half-sphere."""
        if self.variant != "tmm":
            return 0.5 * sphere_area(self.d)
        lat = sphere_area(self.d - 1) if self.d > 2 else 2.0
        val, err = integrate.quad(lambda t: float(self.theta_density(t)), self.cutoff, math.pi / 2,
                                  limit=200, epsabs=0.0, epsrel=1e-13)
        return lat * val

    @cached_property
    def theta_table(self) -> tuple[np.ndarray, np.ndarray]:
        """Tabulated CDF of the deviation angle (TMM); trivial table otherwise."""
        if self.variant != "tmm":
            return np.array([0.0, math.pi / 2]), np.array([0.0, 1.0])
        s = np.linspace(math.log(self.cutoff), math.log(math.pi / 2), 8193)
        theta = np.exp(s)
        dens = self.theta_density(theta) * theta  # d theta = theta ds
        cdf = integrate.cumulative_simpson(dens, x=s, initial=0.0)
        cdf /= cdf[-1]
        cdf[-1] = 1.0
        theta[0] = self.cutoff
        theta[-1] = math.pi / 2
        return theta, cdf

    def theta_cdf(self, theta):
        """Normalized CDF of the deviation angle, by adaptive quadrature."""
        lo = self.theta_min
        total, _ = integrate.quad(lambda t: float(self.theta_density(t)), lo, math.pi / 2, limit=200)
        out = []
        for t in np.atleast_1d(theta):
            t = min(max(float(t), lo), math.pi / 2)
            v, _ = integrate.quad(lambda x: float(self.theta_density(x)), lo, t, limit=200)
            out.append(v / total)
        return np.array(out)

    def to_dict(self) -> dict:
        out = {"variant": self.variant, "d": self.d}
        if self.variant == "tmm":
            out.update(cutoff=self.cutoff, nu=self.nu, strength=self.strength)
        if self.variant == "hs":
            out["speed_coefficient"] = self.speed_coefficient
        return out


def _check_pair(v, w):
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    if v.shape != w.shape or v.ndim != 1:
        raise ValueError("velocities must be 1-d arrays of the same dimension")
    return v, w


def collide_pair(v, w, sigma):
    """Post-collision velocities for the pair ``(v, w)`` and direction ``sigma``."""
    v, w = _check_pair(v, w)
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != v.shape:
        raise ValueError("sigma must have the dimension of the velocities")
    norm = math.sqrt(math.fsum(sigma * sigma))
    if abs(norm - 1.0) > SIGMA_TOL:
        raise ValueError(f"sigma is not a unit vector (|sigma| = {norm!r})")
    sigma = sigma / norm
    center = 0.5 * (v + w)
    half = 0.5 * math.sqrt(math.fsum((v - w) ** 2))
    return center + half * sigma, center - half * sigma


def relative_direction(v, w) -> np.ndarray:
    """Unit vector along ``v - w`` (first axis when ``v == w``)."""
    u = np.asarray(v, dtype=float) - np.asarray(w, dtype=float)
    n = math.sqrt(math.fsum(u * u))
    if n == 0.0:
        e = np.zeros_like(u)
        e[0] = 1.0
        return e
    return u / n


def sample_sigma(kernel: CollisionKernel, relative_dir, rng=None) -> np.ndarray:
    """Draw sigma on the half-sphere around ``relative_dir`` with density b."""
    rng = as_generator(rng)
    uhat = np.asarray(relative_dir, dtype=float)
    if uhat.shape != (kernel.d,):
        raise ValueError("relative direction has the wrong dimension")
    uhat = uhat / np.linalg.norm(uhat)
    U = rng.random(_kernels.sigma_uniforms(kernel.d))
    out = np.empty(kernel.d)
    theta, cdf = kernel.theta_table
    _kernels.sigma_from_uniforms(kernel.kind, uhat, theta, cdf, U, 0, out)
    return out


def kernel_rate(kernel: CollisionKernel, v, w) -> float:
    """Jump rate of one pair: Gamma(|v - w|) times the angular mass."""
    v, w = _check_pair(v, w)
    z = math.sqrt(math.fsum((v - w) ** 2))
    return float(kernel.gamma(z)) * kernel.angular_mass


def multi_indices(d: int, k_max: int, exact: int | None = None) -> list[tuple[int, ...]]:
    """Multi-indices alpha in N^d with |alpha| <= k_max, graded then lexicographic."""
    out = []
    orders = [exact] if exact is not None else range(k_max + 1)
    for k in orders:
        for alpha in itertools.product(range(k, -1, -1), repeat=d):
            if sum(alpha) == k:
                out.append(alpha)
    return out


def unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / special.gamma(d / 2 + 1)
