"""The limit (mean-field) Boltzmann equation for Maxwellian kernels.

For ``Gamma = 1`` the Fourier transform ``F = f^`` obeys

    dF/dt (xi) = int_{half sphere} b(sigma . xi/|xi|) F(xi+) F(xi-) dsigma - A F(xi),
    xi+- = (xi +- |xi| sigma) / 2,

with ``A`` the angular mass of b. The solver works in d=3 with data that are
axisymmetric about the first axis:

    F(xi) = sum_{l <= L} F_l(r) P_l(mu),  r = |xi|,  mu = xi_1 / r.

``F_l`` has the parity of l in r, so it is stored at the positive half of
a Chebyshev grid on ``[-Xi, Xi]`` and interpolated with its parity.
Because ``|xi+-|`` never exceed ``|xi|`` the gain term only needs values
inside the grid, and because ``xi+- `` are fixed multiples of the node
radii all interpolation operators are precomputed. ``L = 0`` is the
isotropic case. Truncating at ``L`` leaves every moment of order ``<= L``
exact.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import chebyshev as C
from scipy import interpolate, special

from . import kac
from .metrics import WeightedPointMeasure
from .model import CollisionKernel, multi_indices, sphere_area
from .sampling import ReferenceDensity, sample_sphere_conditioned

AXIS = 0


# ---------------------------------------------------------------- Chebyshev helpers

def radial_nodes(n: int, Xi: float) -> np.ndarray:
    """Positive half of the 2n-point Chebyshev grid on ``[-Xi, Xi]``, ascending."""
    j = np.arange(n)[::-1]
    return Xi * np.cos((2 * j + 1) * np.pi / (4 * n))


def _half_weights(n: int) -> np.ndarray:
    j = np.arange(n)[::-1]
    return (-1.0) ** j * np.sin((2 * j + 1) * np.pi / (4 * n))


def parity_matrix(nodes: np.ndarray, x, parity: int) -> np.ndarray:
    """Rows interpolate node values of an even (0) or odd (1) function at ``|x|``."""
    w = _half_weights(nodes.size)
    x = np.abs(np.asarray(x, dtype=float).reshape(-1))
    dm = x[:, None] - nodes[None, :]
    hit = dm == 0.0
    dm[hit] = 1.0
    a = w[None, :] / dm
    b = w[None, :] / (x[:, None] + nodes[None, :])
    M = (a + b if parity else a - b) / (a - b).sum(axis=1, keepdims=True)
    for i in np.flatnonzero(hit.any(axis=1)):
        M[i] = hit[i].astype(float)
    return M


def taylor_at_zero(values: np.ndarray, Xi: float, parity: int, order: int) -> np.ndarray:
    """``F^(m)(0) / m!`` for ``m <= order`` of the parity interpolant of node values."""
    values = np.asarray(values, dtype=complex)
    n = values.size
    sign = -1.0 if parity else 1.0
    full = np.concatenate([sign * values[::-1], values])
    j = np.arange(2 * n)[::-1]
    t = np.cos((2 * j + 1) * np.pi / (4 * n))
    c = (1.0 / n) * (C.chebvander(t, 2 * n - 1).T @ full)
    c[0] *= 0.5
    out = np.empty(order + 1, dtype=complex)
    for part, unit in ((c.real, 1.0), (c.imag, 1j)):
        p = C.Chebyshev(part, domain=[-Xi, Xi])
        for m in range(order + 1):
            val = (p.deriv(m) if m else p)(0.0) / math.factorial(m)
            out[m] = val if unit == 1.0 else out[m] + 1j * val
    return out


# ---------------------------------------------------------------- grid densities

@dataclass
class GridDensity:
    """A one-particle density on a grid.

    representation ``"velocity"``: values f(v_k) on the uniform box
    ``[-R, R]^d`` with ``n`` points per axis (``grid["axis"]``).
    ``"radial_fourier"``: isotropic transform F(|xi|) at the radial nodes
    ``grid["r"]`` on ``[0, grid["Xi"]]``.
    ``"axisymmetric_fourier"``: Legendre components F_l at the same nodes, shape (L+1, n).
    ``"fourier"``: values F(xi_k) at the rows of ``grid["xi"]``.
    """

    representation: str
    d: int
    values: np.ndarray
    grid: dict
    time: float = 0.0
    flags: dict = field(default_factory=dict)

    # ------------------------------------------------ velocity grids

    @property
    def spacing(self) -> float:
        ax = self.grid["axis"]
        return float(ax[1] - ax[0])

    def _require(self, *reps):
        if self.representation not in reps:
            raise ValueError(f"operation needs one of {reps}, got {self.representation}")

    def mesh(self) -> list[np.ndarray]:
        self._require("velocity")
        ax = self.grid["axis"]
        return np.meshgrid(*([ax] * self.d), indexing="ij")

    @property
    def mass(self) -> float:
        if self.representation == "velocity":
            return float(self.values.sum() * self.spacing ** self.d)
        return float(np.real(self.evaluate(np.zeros((1, self.d)))[0]))

    @property
    def momentum(self) -> np.ndarray:
        if self.representation == "velocity":
            h = self.spacing ** self.d
            return np.array([float((m * self.values).sum() * h) for m in self.mesh()])
        return np.array([self.moments(1).values[tuple(int(i == k) for i in range(self.d))]
                         for k in range(self.d)])

    @property
    def energy(self) -> float:
        if self.representation == "velocity":
            r2 = sum(m ** 2 for m in self.mesh())
            return float((r2 * self.values).sum() * self.spacing ** self.d)
        if self.representation in ("radial_fourier", "axisymmetric_fourier"):
            tay = taylor_at_zero(self.coefficients()[0], self.grid["Xi"], 0, 2)
            return float(-2 * self.d * tay[2].real)
        raise ValueError("energy not available for this representation")

    # ------------------------------------------------ Fourier representations

    @property
    def L(self) -> int:
        if self.representation == "radial_fourier":
            return 0
        self._require("axisymmetric_fourier")
        return self.values.shape[0] - 1

    def coefficients(self) -> np.ndarray:
        self._require("radial_fourier", "axisymmetric_fourier")
        v = np.asarray(self.values, dtype=complex)
        return v[None, :] if v.ndim == 1 else v

    def evaluate(self, xi) -> np.ndarray:
        """F at the rows of ``xi``; zero beyond the grid (flagged)."""
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        if self.representation == "fourier":
            raise ValueError("a sampled Fourier grid cannot be evaluated off its nodes")
        if self.representation == "velocity":
            h = self.spacing ** self.d
            pts = np.stack([m.ravel() for m in self.mesh()], axis=1)
            return np.exp(-1j * xi @ pts.T) @ (self.values.ravel() * h)
        G = self.coefficients()
        Xi = self.grid["Xi"]
        r = np.linalg.norm(xi, axis=1)
        out_of = r > Xi
        if out_of.any():
            self.flags["truncated"] = True
        rc = np.minimum(r, Xi)
        with np.errstate(invalid="ignore", divide="ignore"):
            mu = np.where(r > 0, xi[:, AXIS] / np.where(r > 0, r, 1.0), 1.0)
        val = np.zeros(xi.shape[0], dtype=complex)
        for l in range(G.shape[0]):
            val += (parity_matrix(self.grid["r"], rc, l % 2) @ G[l]) * special.eval_legendre(l, mu)
        val[out_of] = 0.0
        return val

    def radial_profile(self, r) -> np.ndarray:
        """Isotropic part F_0(r) (the l = 0 coefficient)."""
        G = self.coefficients()
        r = np.asarray(r, dtype=float)
        B = parity_matrix(self.grid["r"], np.minimum(r.ravel(), self.grid["Xi"]), 0)
        return (B @ G[0]).reshape(r.shape)

    def moments(self, k_max: int = 3) -> "MomentVector":
        """Moments M_alpha, |alpha| <= k_max, from the Taylor expansion of F at 0."""
        self._require("radial_fourier", "axisymmetric_fourier")
        G = self.coefficients()
        L = G.shape[0] - 1
        tay = [taylor_at_zero(G[l], self.grid["Xi"], l % 2, k_max) for l in range(L + 1)]
        dirs = _fit_directions()
        vals = {}
        for n in range(k_max + 1):
            # homogeneous degree-n part of F on unit directions
            Fn = np.zeros(dirs.shape[0], dtype=complex)
            for l in range(n % 2, min(n, L) + 1, 2):
                Fn += tay[l][n] * special.eval_legendre(l, dirs[:, AXIS])
            alphas = multi_indices(3, n, exact=n)
            A = np.column_stack([(-1j) ** n * np.prod(dirs ** np.array(a), axis=1)
                                 / math.prod(math.factorial(x) for x in a) for a in alphas])
            sol, *_ = np.linalg.lstsq(A, Fn, rcond=None)
            for a, m in zip(alphas, sol):
                vals[a] = float(m.real)
        return MomentVector(3, k_max, vals)

    def fourier_sup_distance(self, other: "GridDensity", s: float = 2.0, n: int = 2000) -> float:
        """``sup_xi |F - G| / |xi|^s`` for two isotropic transforms on a common grid."""
        Xi = min(self.grid["Xi"], other.grid["Xi"])
        r = np.linspace(0.0, Xi, n + 1)[1:]
        diff = np.abs(self.radial_profile(r) - other.radial_profile(r))
        return float(np.max(diff / r ** s))

    # ------------------------------------------------ velocity reconstruction

    def to_velocity(self, R: float | None = None, n: int | None = None, n_rho: int = 6145) -> "GridDensity":
        """Inverse transform of an axisymmetric transform onto a velocity box (d=3)."""
        self._require("radial_fourier", "axisymmetric_fourier")
        G = self.coefficients()
        E = self.energy
        sig = math.sqrt(E / 3)
        # rounded so that states of one trajectory share the cached Bessel tables
        R = float(f"{8 * sig:.9g}") if R is None else R
        n = default_points(3) if n is None else n
        Xi = self.grid["Xi"]
        r, wr, rho = _hankel_nodes(Xi, R, n_rho)
        Fl = np.stack([parity_matrix(self.grid["r"], r, l % 2) @ G[l] for l in range(G.shape[0])])
        ax = np.linspace(-R, R, n)
        V = np.meshgrid(ax, ax, ax, indexing="ij")
        rr = np.sqrt(V[0] ** 2 + V[1] ** 2 + V[2] ** 2)
        with np.errstate(invalid="ignore", divide="ignore"):
            muv = np.where(rr > 0, V[AXIS] / np.where(rr > 0, rr, 1.0), 1.0)
        out = np.zeros_like(rr)
        for l in range(G.shape[0]):
            jl = _bessel_table(l, Xi, R, n_rho)
            fl = (1j ** l / (2 * math.pi ** 2)) * (jl @ (wr * r ** 2 * Fl[l]))
            spline = interpolate.CubicSpline(rho, fl.real)
            out += spline(rr) * special.eval_legendre(l, muv)
        return GridDensity("velocity", 3, out, {"axis": ax, "R": R}, self.time)

    # ------------------------------------------------ serialization

    def metadata(self) -> dict:
        meta = {"representation": self.representation, "d": self.d, "time": self.time,
                "flags": self.flags}
        if self.representation == "velocity":
            meta.update(extents=[-float(self.grid["axis"][0]), float(self.grid["axis"][-1])],
                        spacing=self.spacing, points=len(self.grid["axis"]))
        elif self.representation in ("radial_fourier", "axisymmetric_fourier"):
            meta.update(extents=[0.0, float(self.grid["Xi"])], spacing=None,
                        points=len(self.grid["r"]), L=self.L, nodes="chebyshev_parity")
        return meta


_N_HANKEL = 768


@lru_cache(maxsize=4)
def _hankel_nodes(Xi: float, R: float, n_rho: int):
    x, w = np.polynomial.legendre.leggauss(_N_HANKEL)
    r = 0.5 * Xi * (x + 1)
    rho = np.linspace(0.0, math.sqrt(3) * R * 1.0001, n_rho)
    return r, 0.5 * Xi * w, rho


@lru_cache(maxsize=16)
def _bessel_table(l: int, Xi: float, R: float, n_rho: int) -> np.ndarray:
    r, _, rho = _hankel_nodes(Xi, R, n_rho)
    return special.spherical_jn(l, np.outer(rho, r))


def default_points(d: int) -> int:
    return {1: 257, 2: 129}.get(d, 65)


def write_grid_density(g: GridDensity, path) -> tuple[Path, Path]:
    """CSV of (coordinates..., value) plus a JSON sidecar."""
    path = Path(path)
    meta_path = path.with_suffix(".json")
    lines = []
    if g.representation == "velocity":
        cols = [f"v{k + 1}" for k in range(g.d)]
        lines.append(",".join(cols + ["value"]))
        mesh = g.mesh()
        for idx in np.ndindex(g.values.shape):
            lines.append(",".join([repr(float(m[idx])) for m in mesh] + [repr(float(g.values[idx]))]))
    elif g.representation in ("radial_fourier", "axisymmetric_fourier"):
        G = g.coefficients()
        lines.append("l,r,value_re,value_im")
        for l in range(G.shape[0]):
            for r, v in zip(g.grid["r"], G[l]):
                lines.append(f"{l},{r!r},{float(v.real)!r},{float(v.imag)!r}")
    else:
        lines.append(",".join([f"xi{k + 1}" for k in range(g.d)] + ["value_re", "value_im"]))
        for xi, v in zip(g.grid["xi"], g.values):
            lines.append(",".join([repr(float(c)) for c in xi] + [repr(float(v.real)), repr(float(v.imag))]))
    path.write_text("\n".join(lines) + "\n")
    meta = g.metadata()
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True))
    return path, meta_path


def read_grid_density(path) -> GridDensity:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    data = np.genfromtxt(path, delimiter=",", names=True)
    d = meta["d"]
    rep = meta["representation"]
    if rep == "velocity":
        n = meta["points"]
        ax = np.linspace(-meta["extents"][0], meta["extents"][1], n)
        vals = np.asarray(data["value"]).reshape((n,) * d)
        return GridDensity(rep, d, vals, {"axis": ax, "R": meta["extents"][1]}, meta["time"], meta["flags"])
    if rep in ("radial_fourier", "axisymmetric_fourier"):
        n = meta["points"]
        L = meta["L"]
        vals = (np.asarray(data["value_re"]) + 1j * np.asarray(data["value_im"])).reshape(L + 1, n)
        grid = {"r": np.asarray(data["r"])[:n], "Xi": float(meta["extents"][1])}
        if rep == "radial_fourier":
            vals = vals[0]
        return GridDensity(rep, d, vals, grid, meta["time"], meta["flags"])
    xi = np.column_stack([data[f"xi{k + 1}"] for k in range(d)])
    return GridDensity(rep, d, data["value_re"] + 1j * data["value_im"], {"xi": xi}, meta["time"], meta["flags"])


# ---------------------------------------------------------------- Maxwellian

@dataclass(frozen=True)
class Maxwellian:
    """Centered Gaussian with per-coordinate variance E/d and unit mass."""

    energy: float
    d: int = 3

    def __post_init__(self):
        if not self.energy > 0:
            raise ValueError("energy must be positive")

    @property
    def variance(self) -> float:
        return self.energy / self.d

    def density(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        r2 = (v ** 2).sum(axis=-1)
        return (2 * math.pi * self.variance) ** (-self.d / 2) * np.exp(-0.5 * r2 / self.variance)

    def log_density(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        r2 = (v ** 2).sum(axis=-1)
        return -0.5 * self.d * math.log(2 * math.pi * self.variance) - 0.5 * r2 / self.variance

    def sample(self, n: int, rng) -> np.ndarray:
        return math.sqrt(self.variance) * rng.normal(size=(n, self.d))


def velocity_box(d: int, E: float, n: int | None = None, R: float | None = None) -> dict:
    R = 8 * math.sqrt(E / d) if R is None else float(R)
    n = default_points(d) if n is None else int(n)
    return {"axis": np.linspace(-R, R, n), "R": R}


def density_on_grid(fn: Callable[[np.ndarray], np.ndarray], d: int, grid: dict, time: float = 0.0) -> GridDensity:
    """Tabulate ``fn`` (taking an (..., d) array) on a velocity box."""
    ax = grid["axis"]
    mesh = np.meshgrid(*([ax] * d), indexing="ij")
    pts = np.stack(mesh, axis=-1)
    return GridDensity("velocity", d, np.asarray(fn(pts), dtype=float), dict(grid), time)


def maxwellian_density(E: float, d: int = 3, n: int | None = None, R: float | None = None) -> GridDensity:
    """Unit-mass Maxwellian with energy E on the default velocity box ``R = 8 sqrt(E/d)``."""
    m = Maxwellian(E, d)
    return density_on_grid(m.density, d, velocity_box(d, E, n, R))


# ---------------------------------------------------------------- initial transforms

def gaussian_mixture_transform(weights, temperatures) -> Callable:
    """Isotropic ``sum_k w_k exp(-T_k r^2 / 2)``."""
    w = np.asarray(weights, dtype=float)
    T = np.asarray(temperatures, dtype=float)

    def F(r, mu):
        r = np.asarray(r, dtype=float)
        return np.tensordot(np.exp(-0.5 * np.multiply.outer(r ** 2, T)), w, axes=([-1], [0])) + 0j

    return F


def polynomial_gaussian_transform(coeffs, T: float = 1.0) -> Callable:
    """Transform of ``gamma_T(v) p(v_1 / sqrt(T)) / Z`` with ``p(x) = sum c_n x^n``.

    Uses ``E[x^n exp(-i k x)] = (-i)^n He_n(k) exp(-k^2/2)`` for standard
    normal x. The result has angular content l <= deg p.
    """
    c = np.asarray(coeffs, dtype=float)
    Z = sum(cn * _normal_moment(n) for n, cn in enumerate(c))

    def F(r, mu):
        r = np.asarray(r, dtype=float)
        k = math.sqrt(T) * r * mu
        poly = sum(cn * (-1j) ** n * special.eval_hermitenorm(n, k) for n, cn in enumerate(c))
        return np.exp(-0.5 * T * r ** 2) * poly / Z

    return F


def polynomial_gaussian_density(coeffs, T: float = 1.0) -> Callable:
    c = np.asarray(coeffs, dtype=float)
    Z = sum(cn * _normal_moment(n) for n, cn in enumerate(c))

    def f(v):
        v = np.asarray(v, dtype=float)
        x = v[..., AXIS] / math.sqrt(T)
        p = sum(cn * x ** n for n, cn in enumerate(c))
        return Maxwellian(3 * T, 3).density(v) * p / Z

    return f


def polynomial_gaussian_energy(coeffs, T: float = 1.0) -> float:
    """``E |v|^2`` of the polynomial-Gaussian density."""
    c = np.asarray(coeffs, dtype=float)
    Z = sum(cn * _normal_moment(n) for n, cn in enumerate(c))
    return T * (2.0 + sum(cn * _normal_moment(n + 2) for n, cn in enumerate(c)) / Z)


def _normal_moment(n: int) -> float:
    return 0.0 if n % 2 else float(special.factorial2(n - 1)) if n else 1.0


def anisotropic_gaussian_transform(T_axis: float, T_perp: float) -> Callable:
    def F(r, mu):
        r = np.asarray(r, dtype=float)
        return np.exp(-0.5 * r ** 2 * (T_axis * mu ** 2 + T_perp * (1 - mu ** 2))) + 0j

    return F


def reference_transform(f0: ReferenceDensity) -> Callable:
    """Axisymmetric transform of a library density (d=3, axis e_1)."""
    cf = f0.charfn()
    if cf is None or f0.d != 3:
        raise ValueError(f"no usable transform for {f0.name} in d={f0.d}")

    def F(r, mu):
        r = np.asarray(r, dtype=float)
        mu = np.broadcast_to(mu, r.shape)
        xi = np.zeros(r.shape + (3,))
        xi[..., 0] = r * mu
        xi[..., 1] = r * np.sqrt(np.clip(1 - mu ** 2, 0, None))
        return cf(xi.reshape(-1, 3)).reshape(r.shape)

    return F


# ---------------------------------------------------------------- spectral solver

class FourierSolver:
    """Galerkin-in-angle, collocation-in-radius solver for Maxwellian kernels."""

    def __init__(self, kernel: CollisionKernel, L: int = 0, energy: float = 3.0, n_r: int = 96,
                 n_theta: int = 40, xi_max: float | None = None):
        if kernel.variant == "hs":
            raise ValueError("the Fourier solver needs a Maxwellian kernel (Gamma = 1)")
        if kernel.d != 3:
            raise ValueError("the Fourier solver is implemented in d = 3")
        self.kernel = kernel
        self.L = int(L)
        self.energy = float(energy)
        self.Xi = 16.0 / math.sqrt(energy / 3) if xi_max is None else float(xi_max)
        self.r = radial_nodes(n_r, self.Xi)
        # deviation angle nodes, weights carry b(theta) sin(theta)
        x, w = np.polynomial.legendre.leggauss(n_theta)
        if kernel.variant == "tmm":
            lo, hi = math.log(kernel.cutoff), math.log(math.pi / 2)
            s = 0.5 * (hi - lo) * (x + 1) + lo
            th = np.exp(s)
            wt = 0.5 * (hi - lo) * w * th
        else:
            th = 0.25 * math.pi * (x + 1)
            wt = 0.25 * math.pi * w
        self.theta = th
        self.wt = wt * kernel.b(th) * np.sin(th)
        c, s_ = np.cos(th / 2), np.sin(th / 2)
        L = self.L
        pars = (0, 1) if L else (0,)
        self.Ic = [np.stack([parity_matrix(self.r, self.r * ck, p) for ck in c]) for p in pars]
        self.Is = [np.stack([parity_matrix(self.r, self.r * sk, p) for sk in s_]) for p in pars]
        self.n_phi = L + 1
        xphi = np.cos((2 * np.arange(self.n_phi) + 1) * np.pi / (2 * self.n_phi))
        self.wphi = 2 * math.pi / self.n_phi
        if L == 0:
            mu, wmu = np.array([0.0]), np.array([2.0])
        else:
            mu, wmu = np.polynomial.legendre.leggauss(2 * L + 1)
        self.mu = mu
        sq = np.sqrt(1 - mu ** 2)
        mup = c[None, :, None] * mu[:, None, None] + s_[None, :, None] * xphi[None, None, :] * sq[:, None, None]
        mum = s_[None, :, None] * mu[:, None, None] - c[None, :, None] * xphi[None, None, :] * sq[:, None, None]
        ls = np.arange(L + 1)
        self.Pp = np.stack([special.eval_legendre(l, mup) for l in ls])
        self.Pm = np.stack([special.eval_legendre(l, mum) for l in ls])
        self.proj = np.stack([(2 * l + 1) / 2 * wmu * special.eval_legendre(l, mu) for l in ls])
        self.loss = 2 * math.pi * float(self.wt.sum())
        self.e0 = parity_matrix(self.r, np.array([0.0]), 0)[0]

    @property
    def angular_mass(self) -> float:
        return self.loss

    def max_dt(self) -> float:
        return 0.5 / self.loss

    def grid(self) -> dict:
        return {"r": self.r, "Xi": self.Xi}

    def project(self, transform: Callable) -> np.ndarray:
        """Legendre components F_l of ``transform(r, mu)`` (exact for angular content <= L)."""
        L = self.L
        if L == 0:
            mu, wmu = np.polynomial.legendre.leggauss(8)
        else:
            mu, wmu = np.polynomial.legendre.leggauss(2 * L + 1)
        vals = transform(self.r[:, None], mu[None, :])
        G = np.empty((L + 1, self.r.size), dtype=complex)
        for l in range(L + 1):
            G[l] = (2 * l + 1) / 2 * (vals * (wmu * special.eval_legendre(l, mu))[None, :]).sum(axis=1)
        return G

    def density(self, G: np.ndarray, time: float = 0.0) -> GridDensity:
        if self.L == 0:
            return GridDensity("radial_fourier", 3, G[0].copy(), self.grid(), time)
        return GridDensity("axisymmetric_fourier", 3, G.copy(), self.grid(), time)

    def initial(self, transform: Callable) -> GridDensity:
        G = self.project(transform)
        G /= self.e0 @ G[0]
        return self.density(G)

    def gain(self, G: np.ndarray) -> np.ndarray:
        Gp = np.empty((G.shape[0], self.theta.size, self.r.size), dtype=complex)
        Gm = np.empty_like(Gp)
        for p in range(len(self.Ic)):
            Gp[p::2] = np.einsum("kij,lj->lki", self.Ic[p], G[p::2])
            Gm[p::2] = np.einsum("kij,lj->lki", self.Is[p], G[p::2])
        Fp = np.einsum("lki,ljkm->ijkm", Gp, self.Pp)
        Fm = np.einsum("lki,ljkm->ijkm", Gm, self.Pm)
        Q = np.einsum("ijkm,k->ij", Fp * Fm, self.wt) * self.wphi
        return (Q @ self.proj.T).T

    def rhs(self, G: np.ndarray) -> np.ndarray:
        return self.gain(G) - self.loss * G

    def step(self, G: np.ndarray, dt: float) -> np.ndarray:
        k1 = self.rhs(G)
        k2 = self.rhs(G + 0.5 * dt * k1)
        k3 = self.rhs(G + 0.5 * dt * k2)
        k4 = self.rhs(G + dt * k3)
        new = G + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        return new / (self.e0 @ new[0])

    def evolve(self, F0: GridDensity, horizon: float, dt: float, every: int = 1) -> list[GridDensity]:
        if dt > self.max_dt() * (1 + 1e-12):
            raise ValueError(f"dt = {dt} exceeds the stability bound {self.max_dt():.4g}")
        G = F0.coefficients().astype(complex)
        if G.shape[0] != self.L + 1 or G.shape[1] != self.r.size:
            raise ValueError("initial datum does not match the solver grid")
        nsteps = max(int(math.ceil(horizon / dt - 1e-9)), 0)
        out = [self.density(G, F0.time)]
        t = F0.time
        for k in range(nsteps):
            h = min(dt, F0.time + horizon - t)
            G = self.step(G, h)
            t = F0.time + (k + 1) * dt if k + 1 < nsteps else F0.time + horizon
            if (k + 1) % every == 0 or k + 1 == nsteps:
                out.append(self.density(G, t))
        return out


def fourier_initial(transform: Callable, L: int = 0, energy: float = 3.0, n_r: int = 96,
                    xi_max: float | None = None) -> GridDensity:
    """Project ``transform(r, mu)`` onto the radial grid sized for ``energy``.

    The cutoff defaults to ``16 / sqrt(energy / 3)``.
    """
    Xi = 16.0 / math.sqrt(energy / 3) if xi_max is None else float(xi_max)
    r = radial_nodes(n_r, Xi)
    probe = FourierSolver.__new__(FourierSolver)
    probe.L, probe.r, probe.Xi = int(L), r, Xi
    probe.e0 = parity_matrix(r, np.array([0.0]), 0)[0]
    G = FourierSolver.project(probe, transform)
    G /= probe.e0 @ G[0]
    return FourierSolver.density(probe, G)


def qhat_gain(F: GridDensity, kernel: CollisionKernel, n_theta: int = 40) -> GridDensity:
    """Gain term of the Fourier collision operator on the nodes of F."""
    L = F.L
    solver = _solver_for(F, kernel, n_theta)
    G = F.coefficients()
    return F.__class__(F.representation, F.d, _squeeze(solver.gain(G), L), dict(F.grid), F.time)


def _squeeze(G, L):
    return G[0] if L == 0 else G


_SOLVER_CACHE: dict = {}


def _solver_for(F: GridDensity, kernel: CollisionKernel, n_theta: int = 40) -> FourierSolver:
    key = (kernel, F.L, F.grid["r"].size, F.grid["Xi"], n_theta)
    if key not in _SOLVER_CACHE:
        _SOLVER_CACHE.clear()
        _SOLVER_CACHE[key] = FourierSolver(kernel, F.L, n_r=F.grid["r"].size, n_theta=n_theta,
                                           xi_max=F.grid["Xi"])
    return _SOLVER_CACHE[key]


def evolve_fourier(F0: GridDensity, kernel: CollisionKernel, horizon: float, dt: float,
                   every: int = 1, n_theta: int = 40) -> list[GridDensity]:
    """RK4 trajectory of the Fourier-transformed limit equation."""
    return _solver_for(F0, kernel, n_theta).evolve(F0, horizon, dt, every)


# ---------------------------------------------------------------- moments

_DIRS = None


def _fit_directions() -> np.ndarray:
    global _DIRS
    if _DIRS is None:
        from scipy.integrate import lebedev_rule
        x, _ = lebedev_rule(17)
        _DIRS = x.T.copy()
    return _DIRS


@dataclass
class MomentVector:
    """Moments M_alpha for all |alpha| <= k_max."""

    d: int
    k_max: int
    values: dict

    def __post_init__(self):
        for a in multi_indices(self.d, self.k_max):
            if a not in self.values:
                raise ValueError(f"missing moment {a}")
            if not math.isfinite(self.values[a]):
                raise ValueError("moments must be finite")

    def __getitem__(self, alpha) -> float:
        return self.values[tuple(alpha)]

    def array(self) -> np.ndarray:
        return np.array([self.values[a] for a in multi_indices(self.d, self.k_max)])

    @classmethod
    def from_array(cls, d: int, k_max: int, arr) -> "MomentVector":
        return cls(d, k_max, dict(zip(multi_indices(d, k_max), map(float, arr))))

    @classmethod
    def of_samples(cls, x: np.ndarray, k_max: int) -> "MomentVector":
        x = np.atleast_2d(x)
        return cls(x.shape[1], k_max, {a: float(np.mean(np.prod(x ** np.array(a), axis=1)))
                                       for a in multi_indices(x.shape[1], k_max)})

    @classmethod
    def of_reference(cls, f0: ReferenceDensity, k_max: int) -> "MomentVector":
        return cls(f0.d, k_max, f0.moments(k_max))

    @classmethod
    def maxwellian(cls, E: float, d: int, k_max: int) -> "MomentVector":
        var = E / d
        vals = {}
        for a in multi_indices(d, k_max):
            vals[a] = math.prod(_normal_moment(x) * var ** (x / 2) for x in a)
        return cls(d, k_max, vals)


@dataclass
class MomentCoefficients:
    """``dM_a/dt = 1/2 sum_{b+c=a} coef[a][(b, c)] M_b M_c``."""

    d: int
    k_max: int
    table: dict
    kernel: dict

    def linear_block(self, k: int) -> np.ndarray:
        """Matrix of the linear part of order k around M_0 = 1."""
        alphas = multi_indices(self.d, k, exact=k)
        idx = {a: i for i, a in enumerate(alphas)}
        zero = (0,) * self.d
        A = np.zeros((len(alphas), len(alphas)))
        for a in alphas:
            for (b, c), v in self.table[a].items():
                if c == zero and b in idx:
                    A[idx[a], idx[b]] += 0.5 * v
                if b == zero and c in idx:
                    A[idx[a], idx[c]] += 0.5 * v
        return A

    def diagonal(self, alpha) -> float:
        alpha = tuple(alpha)
        k = sum(alpha)
        alphas = multi_indices(self.d, k, exact=k)
        return float(self.linear_block(k)[alphas.index(alpha), alphas.index(alpha)])

    def decay_rates(self, k: int) -> np.ndarray:
        """Sorted distinct eigenvalues of the order-k linear block."""
        ev = np.linalg.eigvals(self.linear_block(k)).real
        ev = np.sort(ev)
        out = []
        for e in ev:
            if not out or abs(e - out[-1]) > 1e-8 * max(1.0, abs(e)):
                out.append(e)
        return np.array(out)

    def traceless_rate(self) -> float:
        """Eigenvalue of the order-2 block on traceless symmetric tensors."""
        a = [0] * self.d
        b = [0] * self.d
        a[0] = 2
        b[1] = 2
        alphas = multi_indices(self.d, 2, exact=2)
        v = np.zeros(len(alphas))
        v[alphas.index(tuple(a))] = 1.0
        v[alphas.index(tuple(b))] = -1.0
        w = self.linear_block(2) @ v
        return float(w @ v / (v @ v))

    def slowest_rate(self, k_top: int = 3) -> float:
        """Smallest nonzero decay rate over orders 2..k_top."""
        rates = np.concatenate([self.decay_rates(k) for k in range(2, k_top + 1)])
        neg = rates[rates < -1e-9]
        return float(-neg.max())


def _angular_rule(kernel: CollisionKernel, degree: int, n_theta: int = 48):
    """Nodes/weights on the half sphere around e_1 (theta, azimuth), d=3 or general d via d-1 sphere."""
    x, w = np.polynomial.legendre.leggauss(n_theta)
    if kernel.variant == "tmm":
        lo, hi = math.log(kernel.cutoff), math.log(math.pi / 2)
        s = 0.5 * (hi - lo) * (x + 1) + lo
        th = np.exp(s)
        wt = 0.5 * (hi - lo) * w * th
    else:
        th = 0.25 * math.pi * (x + 1)
        wt = 0.25 * math.pi * w
    d = kernel.d
    wt = wt * kernel.b(th) * np.sin(th) ** (d - 2)
    # directions on S^{d-2} exact for polynomials of the given degree
    if d == 2:
        perp = np.array([[1.0], [-1.0]])
        pw = np.array([1.0, 1.0])
    elif d == 3:
        m = degree + 2
        a = 2 * math.pi * np.arange(m) / m
        perp = np.column_stack([np.cos(a), np.sin(a)])
        pw = np.full(m, 2 * math.pi / m)
    else:
        raise ValueError("moment coefficients are implemented for d <= 3")
    return th, wt, perp, pw


def moment_ode_coefficients(kernel: CollisionKernel, k_max: int = 4, n_theta: int = 48) -> MomentCoefficients:
    """Coefficients of the closed moment hierarchy by angular quadrature.

    For each alpha the collision average
    ``P(v, w) = int b [(v')^a + (w')^a - v^a - w^a] dsigma`` is a homogeneous
    polynomial of degree |alpha| in (v, w); it is sampled at random points
    and fitted exactly in the monomial basis ``v^b w^c``.
    """
    if kernel.variant == "hs":
        raise ValueError("the moment hierarchy closes only for Maxwellian kernels")
    d = kernel.d
    th, wt, perp, pw = _angular_rule(kernel, k_max, n_theta)
    rng = np.random.default_rng(20240611)
    table = {}
    for alpha in multi_indices(d, k_max):
        k = sum(alpha)
        pairs = [(b, c) for b in multi_indices(d, k) for c in multi_indices(d, k, exact=k - sum(b))]
        if k == 0:
            table[alpha] = {((0,) * d, (0,) * d): 0.0}
            continue
        npts = 3 * len(pairs) + 10
        V = rng.normal(size=(npts, d))
        W = rng.normal(size=(npts, d))
        P = _collision_average(V, W, alpha, th, wt, perp, pw)
        A = np.column_stack([np.prod(V ** np.array(b), axis=1) * np.prod(W ** np.array(c), axis=1)
                             for b, c in pairs])
        coef, *_ = np.linalg.lstsq(A, P, rcond=None)
        resid = np.max(np.abs(A @ coef - P)) / max(1.0, np.max(np.abs(P)))
        if resid > 1e-10:
            raise RuntimeError(f"moment coefficient fit failed for {alpha} (residual {resid:.2e})")
        coef[np.abs(coef) < 1e-12 * max(1.0, np.abs(coef).max())] = 0.0
        table[alpha] = {pc: float(v) for pc, v in zip(pairs, coef) if v != 0.0}
    return MomentCoefficients(d, k_max, table, kernel.to_dict())


def _collision_average(V, W, alpha, th, wt, perp, pw):
    d = V.shape[1]
    out = np.zeros(V.shape[0])
    a = np.array(alpha, dtype=float)
    for i in range(V.shape[0]):
        v, w = V[i], W[i]
        z = v - w
        nz = np.linalg.norm(z)
        u = z / nz
        # orthonormal frame around u
        M = np.linalg.qr(np.column_stack([u, np.eye(d)]))[0]
        if M[:, 0] @ u < 0:
            M = -M
        E = M[:, 1:d]
        sig = (np.cos(th)[:, None, None] * u[None, None, :]
               + np.sin(th)[:, None, None] * (perp @ E.T)[None, :, :])
        c = 0.5 * (v + w)
        vp = c + 0.5 * nz * sig
        wp = c - 0.5 * nz * sig
        gain = np.prod(vp ** a, axis=-1) + np.prod(wp ** a, axis=-1)
        val = np.einsum("k,m,km->", wt, pw, gain)
        mass = wt.sum() * pw.sum()
        out[i] = val - mass * (np.prod(v ** a) + np.prod(w ** a))
    return out


def moment_rhs(M: dict, coeffs: MomentCoefficients) -> dict:
    out = {}
    for alpha, row in coeffs.table.items():
        out[alpha] = 0.5 * math.fsum(v * M[b] * M[c] for (b, c), v in row.items())
    return out


def evolve_moments(M0: MomentVector, coeffs: MomentCoefficients, horizon: float, dt: float,
                   every: int = 1) -> list[tuple[float, MomentVector]]:
    """RK4 integration of the closed moment hierarchy."""
    if M0.k_max > coeffs.k_max:
        raise ValueError("initial moments exceed the coefficient table order")
    keys = multi_indices(M0.d, M0.k_max)
    M = {a: M0[a] for a in keys}
    sub = MomentCoefficients(coeffs.d, M0.k_max, {a: coeffs.table[a] for a in keys}, coeffs.kernel)

    def f(state):
        return moment_rhs(state, sub)

    def axpy(x, h, y):
        return {a: x[a] + h * y[a] for a in keys}

    nsteps = max(int(math.ceil(horizon / dt - 1e-9)), 0)
    out = [(0.0, MomentVector(M0.d, M0.k_max, dict(M)))]
    t = 0.0
    for k in range(nsteps):
        h = min(dt, horizon - t)
        k1 = f(M)
        k2 = f(axpy(M, 0.5 * h, k1))
        k3 = f(axpy(M, 0.5 * h, k2))
        k4 = f(axpy(M, h, k3))
        M = {a: M[a] + h / 6 * (k1[a] + 2 * k2[a] + 2 * k3[a] + k4[a]) for a in keys}
        t = (k + 1) * dt if k + 1 < nsteps else horizon
        if (k + 1) % every == 0 or k + 1 == nsteps:
            out.append((t, MomentVector(M0.d, M0.k_max, dict(M))))
    return out


# ---------------------------------------------------------------- particle oracle

ORACLE_REPLICA_OFFSET = 1 << 40


@dataclass
class OracleSamples:
    times: np.ndarray
    clouds: list[WeightedPointMeasure]
    metadata: dict

    def at(self, t: float) -> WeightedPointMeasure:
        k = int(np.flatnonzero(np.isclose(self.times, t, rtol=0, atol=1e-12))[0])
        return self.clouds[k]

    def sample(self, t: float, n: int, rng) -> np.ndarray:
        """n points drawn without replacement from the pooled cloud at t."""
        pts = self.at(t).points
        if n > pts.shape[0]:
            raise ValueError("oracle cloud smaller than the requested sample")
        return pts[rng.choice(pts.shape[0], size=n, replace=False)]


def dsmc_limit_oracle(f0: ReferenceDensity, kernel: CollisionKernel, E: float | None, horizon: float,
                      checkpoints: Sequence[float], N_oracle: int, M_oracle: int, seed: int,
                      threads: int = 1, sphere: bool = True) -> OracleSamples:
    """Pooled one-particle samples of a large-N particle system.

    The replicas use the stream keys ``(seed, 2^40 + r)`` so they never
    coincide with the keys of an experiment ensemble.
    """
    E = f0.energy if E is None else E
    if sphere:
        def sampler(rng):
            return sample_sphere_conditioned(f0, N_oracle, E, rng)
    else:
        def sampler(rng):
            from .sampling import sample_tensorized
            return sample_tensorized(f0, N_oracle, rng)
    ens = kac.run_ensemble(sampler, kernel, horizon, checkpoints, M_oracle, seed, threads,
                           replica_offset=ORACLE_REPLICA_OFFSET)
    clouds = []
    for t in ens.checkpoints:
        V = ens.velocities(t).reshape(-1, f0.d)
        clouds.append(WeightedPointMeasure.empirical(V))
    meta = {"N_oracle": N_oracle, "M_oracle": M_oracle, "seed": seed, "kernel": kernel.to_dict(),
            "replica_offset": ORACLE_REPLICA_OFFSET, "sphere_conditioned": sphere,
            "f0": f0.to_dict(), "E": E}
    return OracleSamples(ens.checkpoints, clouds, meta)


def hs_limit_oracle(f0: ReferenceDensity, E: float, horizon: float, checkpoints: Sequence[float],
                    N_oracle: int, M_oracle: int, seed: int, threads: int = 1) -> OracleSamples:
    """Large-N hard-sphere particle system standing in for the limit solution."""
    return dsmc_limit_oracle(f0, CollisionKernel.hs(f0.d), E, horizon, checkpoints, N_oracle,
                             M_oracle, seed, threads)
