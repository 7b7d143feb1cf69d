"""Relative entropy, Fisher information and entropy production on velocity
grids, plus a nearest-neighbour entropy estimate for particle clouds."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage, special
from scipy.spatial import cKDTree

from .limit import GridDensity, Maxwellian
from . import _kernels
from .metrics import Estimate
from .model import CollisionKernel, unit_ball_volume
from .rng import BOOTSTRAP, stream

NEGATIVE_TOL = 1e-12
LOG_FLOOR = 1e-16


def _check_nonnegative(f: GridDensity) -> np.ndarray:
    if f.representation != "velocity":
        raise ValueError("entropy functionals need a velocity-grid density")
    vals = f.values
    worst = float(vals.min())
    if worst < -NEGATIVE_TOL * max(1.0, float(vals.max())):
        raise ValueError(f"density takes negative values (min {worst:.3e})")
    return np.clip(vals, 0.0, None)


def _reference_log(g, f: GridDensity) -> np.ndarray:
    if isinstance(g, Maxwellian):
        if g.d != f.d:
            raise ValueError("dimension mismatch")
        return g.log_density(np.stack(f.mesh(), axis=-1))
    if isinstance(g, GridDensity):
        if g.values.shape != f.values.shape or not np.allclose(g.grid["axis"], f.grid["axis"]):
            raise ValueError("densities live on different grids")
        with np.errstate(divide="ignore"):
            return np.log(np.clip(g.values, 0.0, None))
    raise TypeError("reference must be a Maxwellian or a velocity GridDensity")


def relative_entropy(f: GridDensity, g) -> float:
    """``int f log(f / g)`` by the rectangle rule on f's grid."""
    fv = _check_nonnegative(f)
    lg = _reference_log(g, f)
    pos = fv > 0
    if np.any(~np.isfinite(lg[pos])):
        raise ValueError("reference vanishes where f does not")
    integrand = fv[pos] * (np.log(fv[pos]) - lg[pos])
    return math.fsum(integrand) * f.spacing ** f.d


_D6 = np.array([-1.0, 9.0, -45.0, 0.0, 45.0, -9.0, 1.0]) / 60.0


def gradient(values: np.ndarray, h: float) -> list[np.ndarray]:
    """Sixth-order central differences, values outside the box taken as zero."""
    out = []
    for ax in range(values.ndim):
        pad = [(0, 0)] * values.ndim
        pad[ax] = (3, 3)
        p = np.pad(values, pad)
        g = np.zeros_like(values)
        n = values.shape[ax]
        for k, c in enumerate(_D6):
            if c:
                g += c * np.take(p, np.arange(k, k + n), axis=ax)
        out.append(g / h)
    return out


def fisher_information(f: GridDensity, relative_to: Maxwellian | None = None) -> float:
    """``int |grad f|^2 / f``, or relative to a Maxwellian ``M``:
    ``int f |grad log(f / M)|^2``."""
    fv = _check_nonnegative(f)
    if np.any(fv[(slice(1, -1),) * fv.ndim] <= 0):
        raise ValueError("Fisher information needs a strictly positive density in the grid interior")
    h = f.spacing
    grads = gradient(fv, h)
    keep = fv > 0
    if relative_to is not None:
        mesh = f.mesh()
        T = relative_to.variance
        grads = [g + fv * m / T for g, m in zip(grads, mesh)]
    num = sum(g ** 2 for g in grads)
    return math.fsum((num[keep] / fv[keep]).ravel()) * h ** f.d


def _log_interp(coeffs: np.ndarray, axis: np.ndarray, pts: np.ndarray, outside: float) -> np.ndarray:
    idx = (pts - axis[0]) / (axis[1] - axis[0])
    return ndimage.map_coordinates(coeffs, idx.T, order=3, mode="constant", cval=outside,
                                   prefilter=False)


def entropy_production(f: GridDensity, kernel: CollisionKernel, mc_budget: int = 1 << 16,
                       seed: int = 0) -> Estimate:
    """Monte Carlo estimate of the entropy dissipation

        D(f) = 1/4 int int int_{half} B (f' f'_* - f f_*) log(f' f'_* / (f f_*)),

    normalized so that ``dH/dt = -D`` along the limit equation. Pairs are
    drawn from the Maxwellian with f's energy, sigma from b. Post-collision
    points outside the grid see a negligible floor of f and set ``f.flags["clamped"]``.
    """
    if not isinstance(f, GridDensity):
        raise TypeError("entropy production needs a velocity-grid density")
    n = int(mc_budget)
    fv = _check_nonnegative(f)
    d = f.d
    if kernel.d != d:
        raise ValueError("kernel and density dimensions differ")
    E = max(f.energy, 1e-12)
    ref = Maxwellian(E, d)
    rng = stream(seed, 0, BOOTSTRAP)
    v = ref.sample(n, rng)
    w = ref.sample(n, rng)
    # splining log f keeps the interpolant positive and exact on Maxwellians
    floor = LOG_FLOOR * float(fv.max())
    logf = np.log(np.maximum(fv, floor))
    coef = ndimage.spline_filter(logf, order=3, mode="nearest")
    outside = math.log(floor)
    ax = f.grid["axis"]
    z = v - w
    nz = np.linalg.norm(z, axis=1)
    sig = np.empty((n, d))
    theta, cdf = kernel.theta_table
    U = rng.random((n, _kernels.sigma_uniforms(d)))
    for i in range(n):
        uhat = z[i] / nz[i] if nz[i] > 0 else np.eye(d)[0]
        _kernels.sigma_from_uniforms(kernel.kind, uhat, theta, cdf, U[i], 0, sig[i])
    c = 0.5 * (v + w)
    vp = c + 0.5 * nz[:, None] * sig
    wp = c - 0.5 * nz[:, None] * sig
    R = ax[-1]
    if max(np.abs(v).max(), np.abs(w).max(), np.abs(vp).max(), np.abs(wp).max()) > R:
        f.flags["clamped"] = True
    la = _log_interp(coef, ax, v, outside) + _log_interp(coef, ax, w, outside)
    lb = _log_interp(coef, ax, vp, outside) + _log_interp(coef, ax, wp, outside)
    term = (np.exp(lb) - np.exp(la)) * (lb - la)
    weight = 0.25 * kernel.angular_mass * kernel.gamma(nz) / (ref.density(v) * ref.density(w))
    x = term * weight
    return Estimate(float(x.mean()), float(x.std(ddof=1) / math.sqrt(n)))


MIN_SAMPLES = 500
JITTER = 1e-12


def knn_entropy_terms(x: np.ndarray, k: int = 4) -> tuple[np.ndarray, float]:
    """Per-point terms ``d log eps_i`` and the constant of the Kozachenko-Leonenko estimator."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n, d = x.shape
    if n <= k:
        raise ValueError("need more points than neighbours")
    dist, _ = cKDTree(x).query(x, k=k + 1)
    eps = dist[:, k]
    if np.any(eps <= 0):
        raise ValueError("duplicate points make the nearest-neighbour estimate degenerate")
    const = special.digamma(n) - special.digamma(k) + math.log(unit_ball_volume(d))
    return d * np.log(eps), const


def marginal_entropy_estimate(x: np.ndarray, gamma: Maxwellian | None = None, k: int = 4,
                              bootstrap: int = 200, seed: int = 0, level: float = 0.95,
                              calibrate: int = 8) -> dict:
    """Estimate of ``H(mu | gamma)`` for a one-particle cloud.

    The differential entropy comes from the k-nearest-neighbour estimator and
    the cross term ``int log gamma dmu`` is the exact empirical average. The
    finite-sample bias of the neighbour estimator is removed by running it on
    ``calibrate`` gamma clouds of the same size, whose entropy is known. The
    input is sorted first, so the result does not depend on sample order.
    ``gamma`` defaults to the Maxwellian with the cloud's energy.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n, d = x.shape
    if n < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} samples, got {n}")
    x = x[np.lexsort(x.T[::-1])]
    flags = {}
    _, counts = np.unique(x, axis=0, return_counts=True)
    if np.any(counts > 1):
        rng = stream(seed, 1, BOOTSTRAP)
        scale = max(float(np.abs(x).max()), 1.0)
        x = x + JITTER * scale * rng.standard_normal(x.shape)
        flags["jittered"] = True
    if gamma is None:
        gamma = Maxwellian(float(np.mean((x ** 2).sum(axis=1))), d)
    terms, const = knn_entropy_terms(x, k)
    bias, cal_var = 0.0, 0.0  # cal_var: spread of one calibration run
    if calibrate > 0:
        exact = 0.5 * d * math.log(2 * math.pi * math.e * gamma.variance)
        errs = []
        for j in range(calibrate):
            t, c = knn_entropy_terms(gamma.sample(n, stream(seed, 2 + j, BOOTSTRAP)), k)
            errs.append(c + t.mean() - exact)
        bias = float(np.mean(errs))
        cal_var = float(np.var(errs, ddof=1)) if calibrate > 1 else 0.0
    h = const + terms.mean() - bias
    cross_terms = -gamma.log_density(x)
    H = float(cross_terms.mean() - h)
    rng = stream(seed, 0, BOOTSTRAP)
    idx = rng.integers(0, n, size=(bootstrap, n))
    boot = cross_terms[idx].mean(axis=1) - terms[idx].mean(axis=1)
    # resampling points misses the coupling between neighbour distances, so
    # the spread seen on the calibration clouds is used when it is larger
    var = max(float(boot.var(ddof=1)) if bootstrap > 1 else 0.0, cal_var)
    se = math.sqrt(var * (1 + 1 / max(calibrate, 1))) if var > 0 else math.nan
    z = float(special.ndtri(0.5 + level / 2))
    return {"entropy": float(h), "relative_entropy": H, "ci": (H - z * se, H + z * se),
            "stderr": se, "n": n, "k": k, "bias_correction": bias, "flags": flags}


@dataclass
class EntropyReport:
    times: list = field(default_factory=list)
    relative_entropy: list = field(default_factory=list)
    production: list = field(default_factory=list)
    production_stderr: list = field(default_factory=list)
    fisher: list = field(default_factory=list)

    def add(self, t, H, D=math.nan, D_err=math.nan, I=math.nan):
        self.times.append(float(t))
        self.relative_entropy.append(float(H))
        self.production.append(float(D))
        self.production_stderr.append(float(D_err))
        self.fisher.append(float(I))

    def monotone(self, tol: float = 1e-8) -> bool:
        H = np.asarray(self.relative_entropy)
        return bool(np.all(np.diff(H) <= tol))

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "relative_entropy", "production", "production_stderr", "fisher"])
            for row in zip(self.times, self.relative_entropy, self.production,
                           self.production_stderr, self.fisher):
                w.writerow([repr(x) for x in row])
        return path
