"""Chaos and relaxation functionals over ensembles, and the law-of-large-numbers
rate experiment."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .kac import Ensemble
from .limit import GridDensity, OracleSamples
from .metrics import Estimate, WeightedPointMeasure, assignment_cost
from .rng import BOOTSTRAP, REFERENCE, stream
from .sampling import ReferenceDensity, chaos_baseline, sample_uniform_sphere

MAX_ELL = 4
ASSIGNMENT_LIMIT = 2000
CSV_COLUMNS = ("t", "value", "stderr", "N", "M", "ell", "metric", "kernel", "seed")


@dataclass
class ChaosSeries:
    times: list
    values: list
    stderr: list
    N: int
    M: int
    ell: int
    metric: str
    kernel: dict
    seed: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if any(s < 0 for s in self.stderr if not math.isnan(s)):
            raise ValueError("standard errors must be nonnegative")
        if any(v < 0 for v in self.values):
            raise ValueError("values must be nonnegative")

    def sup(self) -> Estimate:
        k = int(np.argmax(self.values))
        return Estimate(self.values[k], self.stderr[k])

    def at(self, t: float) -> Estimate:
        k = int(np.flatnonzero(np.isclose(self.times, t, rtol=0, atol=1e-12))[0])
        return Estimate(self.values[k], self.stderr[k])

    def write(self, path) -> tuple[Path, Path]:
        path = Path(path)
        kern = self.kernel.get("variant", "") if isinstance(self.kernel, dict) else str(self.kernel)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for t, v, s in zip(self.times, self.values, self.stderr):
                w.writerow([repr(float(t)), repr(float(v)), repr(float(s)), self.N, self.M, self.ell,
                            self.metric, kern, self.seed])
        meta = path.with_suffix(".json")
        meta.write_text(json.dumps(asdict(self), indent=2, sort_keys=True, default=_jsonable))
        return path, meta

    @classmethod
    def read(cls, path) -> "ChaosSeries":
        data = json.loads(Path(path).with_suffix(".json").read_text())
        return cls(**data)


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialize {type(x).__name__}")


# ---------------------------------------------------------------- marginals

def extract_marginal(ensemble: Ensemble, t: float, ell: int = 1, augment: bool = False,
                     seed: int = 0) -> WeightedPointMeasure:
    """ell-marginal cloud: the first ell particles of every replica.

    With ``augment`` a second tuple per replica, a uniformly random
    ell-subset (in random order), is appended.
    """
    V = ensemble.velocities(t)  # raises on a missing checkpoint
    M, N, d = V.shape
    if not 1 <= ell <= N:
        raise ValueError("marginal order exceeds particle count")
    pts = V[:, :ell, :].reshape(M, ell * d)
    if augment:
        rng = stream(seed, ensemble.checkpoint_index(t), REFERENCE)
        extra = np.empty_like(pts)
        for r in range(M):
            idx = rng.choice(N, size=ell, replace=False)
            extra[r] = V[r, idx, :].reshape(-1)
        pts = np.concatenate([pts, extra])
    return WeightedPointMeasure.empirical(pts)


def sample_velocity_grid(g: GridDensity, n: int, rng) -> np.ndarray:
    """Cell-centred draws from a velocity-grid density with uniform jitter."""
    if g.representation != "velocity":
        raise ValueError("need a velocity-grid density")
    p = np.clip(g.values.ravel(), 0.0, None)
    p = p / p.sum()
    idx = rng.choice(p.size, size=n, p=p)
    ax = g.grid["axis"]
    h = g.spacing
    coords = np.stack(np.unravel_index(idx, g.values.shape), axis=1)
    return ax[coords] + h * (rng.random((n, g.d)) - 0.5)


def reference_cloud(reference, t: float, n: int, ell: int, d: int, rng) -> np.ndarray:
    """n iid ell-tuples from f_t^{ell} as an (n, ell*d) array."""
    if isinstance(reference, OracleSamples):
        pts = reference.sample(t, n * ell, rng)
    elif isinstance(reference, GridDensity):
        pts = sample_velocity_grid(reference, n * ell, rng)
    elif isinstance(reference, ReferenceDensity):
        pts = reference.sample(n * ell, rng)
    elif isinstance(reference, WeightedPointMeasure):
        if reference.size != n:
            raise ValueError(f"reference cloud has {reference.size} points, marginal has {n}")
        return reference.points
    elif callable(reference):
        pts = np.asarray(reference(t, n * ell, rng), dtype=float)
    else:
        raise TypeError("unsupported reference")
    return pts.reshape(n, ell * d)


def _cloud_distance(x: np.ndarray, y: np.ndarray, q: float, ell: int, bootstrap: int, rng) -> Estimate:
    if x.shape != y.shape:
        raise ValueError(f"cloud sizes differ: {x.shape} vs {y.shape}")
    n = x.shape[0]
    if x.shape[1] > 1 and n > ASSIGNMENT_LIMIT:
        raise ValueError(f"clouds above {ASSIGNMENT_LIMIT} points must be subsampled")
    value = assignment_cost(x, y, q) / ell
    if bootstrap > 0:
        reps = np.empty(bootstrap)
        for b in range(bootstrap):
            i = rng.integers(0, n, n)
            j = rng.integers(0, n, n)
            reps[b] = assignment_cost(x[i], y[j], q) / ell
        err = float(reps.std(ddof=1))
    else:
        err = math.nan
    return Estimate(float(value), err)


def chaos_metric(ensemble: Ensemble, reference, t: float, ell: int = 1, q: float = 1.0,
                 augment: bool = False, bootstrap: int = 20, seed: int = 0) -> Estimate:
    """``W_q(marginal cloud, iid f_t^{ell} cloud) / ell`` with a bootstrap standard error.

    ``reference`` may be an oracle, a velocity-grid density, a library
    density (a stationary f_t), a size-matched point cloud, or a callable
    ``(t, n, rng) -> points``.
    """
    if ell > MAX_ELL:
        raise ValueError(f"marginal order is capped at {MAX_ELL}")
    cloud = extract_marginal(ensemble, t, ell, augment, seed)
    k = ensemble.checkpoint_index(t)
    rng = stream(seed, k, REFERENCE)
    d = ensemble.velocities(t).shape[2]
    y = reference_cloud(reference, t, cloud.size, ell, d, rng)
    return _cloud_distance(cloud.points, y, q, ell, bootstrap, stream(seed, k, BOOTSTRAP))


def relaxation_metric(ensemble: Ensemble, t: float, ell: int = 1, augment: bool = False,
                      bootstrap: int = 20, seed: int = 0, energy: float | None = None) -> Estimate:
    """``W_1(marginal cloud, uniform-sphere marginal cloud) / ell``."""
    V0 = ensemble.velocities(ensemble.checkpoints[0])
    M, N, d = V0.shape
    E = float(np.mean((V0 ** 2).sum(axis=2))) if energy is None else energy
    cloud = extract_marginal(ensemble, t, ell, augment, seed)
    k = ensemble.checkpoint_index(t)
    rng = stream(seed, k, REFERENCE)
    ref = np.empty_like(cloud.points)
    for r in range(cloud.size):
        ref[r] = sample_uniform_sphere(N, E, d, rng).velocities[:ell].reshape(-1)
    return _cloud_distance(cloud.points, ref, 1.0, ell, bootstrap, stream(seed, k, BOOTSTRAP))


def chaos_series(ensemble: Ensemble, reference, ell: int = 1, q: float = 1.0, augment: bool = False,
                 bootstrap: int = 20, seed: int = 0, times: Sequence[float] | None = None) -> ChaosSeries:
    times = list(ensemble.checkpoints if times is None else times)
    est = [chaos_metric(ensemble, reference, t, ell, q, augment, bootstrap, seed) for t in times]
    return ChaosSeries(times, [e.value for e in est], [e.stderr for e in est], ensemble.n,
                       ensemble.replicas, ell, f"w{q:g}", ensemble.kernel.to_dict(), seed,
                       {"augmented": augment, "bootstrap": bootstrap,
                        "master_seed": ensemble.master_seed})


def relaxation_series(ensemble: Ensemble, ell: int = 1, augment: bool = False, bootstrap: int = 20,
                      seed: int = 0, times: Sequence[float] | None = None,
                      energy: float | None = None) -> ChaosSeries:
    times = list(ensemble.checkpoints if times is None else times)
    est = [relaxation_metric(ensemble, t, ell, augment, bootstrap, seed, energy) for t in times]
    return ChaosSeries(times, [e.value for e in est], [e.stderr for e in est], ensemble.n,
                       ensemble.replicas, ell, "w1_sphere", ensemble.kernel.to_dict(), seed,
                       {"augmented": augment, "bootstrap": bootstrap,
                        "master_seed": ensemble.master_seed})


# ---------------------------------------------------------------- law of large numbers

@dataclass
class LLNResult:
    Ns: list
    values: list
    stderr: list
    slope: float
    degenerate: bool
    metric: str

    def rows(self) -> list[tuple]:
        return list(zip(self.Ns, self.values, self.stderr))

    def write(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["N", "value", "stderr", "metric"])
            for N, v, s in self.rows():
                w.writerow([N, repr(float(v)), repr(float(s)), self.metric])
        return path


def lln_rate_experiment(f0: ReferenceDensity, metric: str = "w1", Ns: Sequence[int] = (100, 1000, 10000),
                        M: int = 500, seed: int = 0, s: float = 1.0) -> LLNResult:
    """Monte Carlo ``E D(mu^N, f0)`` along a geometric N schedule and its log-log slope."""
    Ns = [int(n) for n in Ns]
    if len(Ns) < 2:
        raise ValueError("need at least two values of N")
    ratios = np.diff(np.log(Ns))
    if np.any(ratios <= 0) or not np.allclose(ratios, ratios[0], rtol=1e-6):
        raise ValueError("the N schedule must be geometric and increasing")
    est = [chaos_baseline(f0, N, M, metric, seed, s) for N in Ns]
    vals = np.array([e.value for e in est])
    degenerate = bool(np.any(vals <= 0))
    slope = math.nan if degenerate else float(np.polyfit(np.log(Ns), np.log(vals), 1)[0])
    return LLNResult(Ns, vals.tolist(), [e.stderr for e in est], slope, degenerate, metric)
