"""Command-line entry point: TOML experiment recipes in, CSV series and JSON metadata out.

    kacchaos chaos --config presets/c08_chaos_trend.toml --out runs/c08
    kacchaos validate --config my.toml
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import re
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import __version__

KINDS = ("simulate", "chaos", "relaxation", "lln", "metrics-check", "entropy-track")
SECTIONS = ("kernel", "system", "initial", "metric", "reference", "solver")
TOP_KEYS = ("kind", "seed", "out", "snapshots")
SYSTEM_KEYS = ("d", "N", "M", "E", "horizon", "checkpoints")
SAMPLERS = ("tensorized", "sphere", "uniform_sphere")
THREADS_ENV = "KAC_CHAOS_THREADS"

SIMULATE_COLUMNS = ("replica", "t", "N", "collisions", "energy", "momentum_max")
METRICS_COLUMNS = ("pair", "d", "n", "item", "lhs", "rhs", "slack", "pass")
KNN_COLUMNS = ("t", "relative_entropy", "ci_lo", "ci_hi", "stderr", "n")


# ---------------------------------------------------------------- configuration

@dataclass
class ExperimentConfig:
    kind: str
    seed: int = 0
    out: str = "out"
    snapshots: bool = True
    kernel: dict = field(default_factory=lambda: {"variant": "gmm"})
    d: int = 3
    N: list = field(default_factory=lambda: [64])
    M: int = 1
    E: float | None = None
    horizon: float = 1.0
    checkpoints: list | None = None
    initial: dict = field(default_factory=lambda: {"name": "trunc_gauss"})
    metric: dict = field(default_factory=dict)
    reference: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)

    @property
    def times(self) -> list:
        return list(self.checkpoints) if self.checkpoints is not None else [0.0, self.horizon]

    def to_dict(self) -> dict:
        system = {"d": self.d, "N": list(self.N), "M": self.M, "horizon": self.horizon}
        if self.E is not None:
            system["E"] = self.E
        if self.checkpoints is not None:
            system["checkpoints"] = list(self.checkpoints)
        return {"kind": self.kind, "seed": self.seed, "out": self.out, "snapshots": self.snapshots,
                "kernel": dict(self.kernel), "system": system, "initial": dict(self.initial),
                "metric": dict(self.metric), "reference": dict(self.reference),
                "solver": dict(self.solver)}

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        system = dict(data.get("system", {}))
        N = system.get("N", [64])
        kw = {k: data[k] for k in TOP_KEYS if k in data}
        kw.update({s: dict(data[s]) for s in ("kernel", "initial", "metric", "reference", "solver")
                   if s in data})
        kw.update({k: system[k] for k in ("d", "M", "E", "horizon", "checkpoints") if k in system})
        kw["N"] = [N] if isinstance(N, int) else list(N)
        return cls(**kw)


@dataclass(frozen=True)
class Diagnostic:
    message: str
    key: str = ""
    line: int | None = None
    source: str = ""

    def __str__(self):
        where = self.source or "<config>"
        if self.line is not None:
            where += f":{self.line}"
        return f"{where}: {self.key + ': ' if self.key else ''}{self.message}"


_HEADER = re.compile(r"^\s*\[\s*([A-Za-z0-9_\-]+)\s*\]")
_KEY = re.compile(r"^\s*([A-Za-z0-9_\-]+)\s*=")


def key_lines(text: str) -> dict:
    """Map ``"section.key"`` (or ``"key"`` at top level) to its 1-based line."""
    out = {}
    section = ""
    for n, line in enumerate(text.splitlines(), 1):
        m = _HEADER.match(line)
        if m:
            section = m.group(1)
            out.setdefault(section, n)
            continue
        m = _KEY.match(line)
        if m:
            out.setdefault(f"{section}.{m.group(1)}" if section else m.group(1), n)
    return out


def load_config(path) -> tuple[ExperimentConfig | None, list[Diagnostic], dict]:
    path = Path(path)
    text = path.read_text()
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        return None, [Diagnostic(f"TOML syntax error: {exc}", line=int(m.group(1)) if m else None,
                                 source=str(path))], {}
    lines = key_lines(text)
    diags = [Diagnostic(f"unknown key {k!r}", k, lines.get(k), str(path))
             for k in data if k not in TOP_KEYS + SECTIONS]
    diags += [Diagnostic(f"unknown key {k!r}", f"system.{k}", lines.get(f"system.{k}"), str(path))
              for k in data.get("system", {}) if k not in SYSTEM_KEYS]
    if "kind" not in data:
        diags.append(Diagnostic("missing experiment kind", "kind", None, str(path)))
        return None, diags, lines
    try:
        cfg = ExperimentConfig.from_dict(data)
    except TypeError as exc:
        diags.append(Diagnostic(str(exc), source=str(path)))
        return None, diags, lines
    return cfg, diags, lines


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def validate(cfg: ExperimentConfig, lines: dict | None = None, source: str = "") -> list[Diagnostic]:
    """Schema and semantic checks. Never raises, never mutates ``cfg``."""
    from .model import CollisionKernel
    from .sampling import NAMES, ReferenceDensity

    lines = lines or {}
    out: list[Diagnostic] = []

    def bad(key, msg):
        out.append(Diagnostic(msg, key, lines.get(key), source))

    if cfg.kind not in KINDS:
        bad("kind", f"unknown experiment kind {cfg.kind!r}; choose from {', '.join(KINDS)}")
    if not _is_int(cfg.seed) or not 0 <= cfg.seed < 2 ** 64:
        bad("seed", "seed must be an integer in [0, 2^64)")
    if not _is_int(cfg.d) or cfg.d < 1:
        bad("system.d", "dimension must be a positive integer")
        return out
    if not cfg.N or not all(_is_int(n) and n >= 1 for n in cfg.N):
        bad("system.N", "N must be a positive integer or a list of them")
    if not _is_int(cfg.M) or cfg.M < 1:
        bad("system.M", "M must be a positive integer")
    if cfg.E is not None and not (isinstance(cfg.E, (int, float)) and cfg.E > 0):
        bad("system.E", "energy must be positive")
    if not isinstance(cfg.horizon, (int, float)) or cfg.horizon < 0:
        bad("system.horizon", "horizon must be nonnegative")
    else:
        cps = cfg.times
        if any(not isinstance(c, (int, float)) for c in cps):
            bad("system.checkpoints", "checkpoints must be numbers")
        elif list(cps) != sorted(cps) or (cps and (cps[0] < 0 or cps[-1] > cfg.horizon)):
            bad("system.checkpoints", "checkpoints must be sorted and lie in [0, horizon]")

    needs_kernel = cfg.kind in ("simulate", "chaos", "relaxation", "entropy-track")
    kern = dict(cfg.kernel)
    variant = kern.pop("variant", "gmm")
    if needs_kernel:
        if variant not in ("gmm", "hs", "tmm"):
            bad("kernel.variant", f"unknown kernel variant {variant!r}")
        elif variant == "tmm":
            eps = kern.get("cutoff")
            if not isinstance(eps, (int, float)) or eps <= 0:
                bad("kernel.cutoff", "TMM cutoff epsilon must be positive")
            elif eps >= math.pi / 2:
                bad("kernel.cutoff", "TMM cutoff epsilon must be below pi/2")
        if cfg.d < 2:
            bad("system.d", "collision kernels need d >= 2")
        if not out:
            try:
                make_kernel(cfg)
            except (TypeError, ValueError) as exc:
                bad("kernel", str(exc))

    init = dict(cfg.initial)
    name = init.pop("name", None)
    sampler = init.pop("sampler", "tensorized")
    if sampler not in SAMPLERS:
        bad("initial.sampler", f"unknown sampler {sampler!r}; choose from {', '.join(SAMPLERS)}")
    if sampler != "uniform_sphere" and cfg.kind not in ("metrics-check",) and not (
            cfg.kind == "entropy-track" and cfg.solver.get("source", "spectral") == "spectral"):
        if name not in NAMES:
            bad("initial.name", f"unknown density {name!r}; choose from {', '.join(NAMES)}")
        else:
            try:
                ReferenceDensity(name, cfg.d, init)
            except (TypeError, ValueError) as exc:
                bad("initial", str(exc))
    if sampler in ("sphere", "uniform_sphere") and any(_is_int(n) and n < 2 for n in cfg.N):
        bad("system.N", "sphere samplers need N >= 2")
    if sampler == "uniform_sphere" and cfg.E is None:
        bad("system.E", "the uniform sphere sampler needs an energy")

    ell = cfg.metric.get("ell", 1)
    if not _is_int(ell) or ell < 1:
        bad("metric.ell", "marginal order must be a positive integer")
    elif cfg.kind in ("chaos", "relaxation"):
        if any(_is_int(n) and ell > n for n in cfg.N):
            bad("metric.ell", "marginal order exceeds particle count")
        elif ell > 4:
            bad("metric.ell", "marginal order is capped at 4")
    q = cfg.metric.get("q", 1.0)
    if not isinstance(q, (int, float)) or q < 1:
        bad("metric.q", "q must be at least 1")

    if cfg.kind == "lln":
        m = cfg.metric.get("name", "w1")
        if m not in ("w1", "hdot"):
            bad("metric.name", f"unknown LLN metric {m!r}")
        Ns = [n for n in cfg.N if _is_int(n) and n > 0]
        if len(Ns) < 2:
            bad("system.N", "the LLN experiment needs at least two values of N")
        else:
            r = np.diff(np.log(Ns))
            if np.any(r <= 0) or not np.allclose(r, r[0], rtol=1e-6):
                bad("system.N", "the N schedule must be geometric and increasing")
    if cfg.kind == "chaos":
        kind = cfg.reference.get("kind", "oracle")
        if kind not in ("oracle", "initial"):
            bad("reference.kind", f"unknown reference {kind!r}; choose oracle or initial")
        if kind == "oracle" and (not _is_int(cfg.reference.get("N", 4096))
                                 or cfg.reference.get("N", 4096) < 2):
            bad("reference.N", "oracle particle count must be an integer >= 2")
    if cfg.kind == "entropy-track":
        src = cfg.solver.get("source", "spectral")
        if src not in ("spectral", "particles"):
            bad("solver.source", f"unknown source {src!r}")
        elif src == "spectral":
            if cfg.d != 3:
                bad("system.d", "the spectral solver is three-dimensional")
            if variant == "hs":
                bad("kernel.variant", "the spectral solver needs a Maxwellian kernel")
        elif any(_is_int(n) and n * cfg.M < 500 for n in cfg.N):
            bad("system.M", "the pooled cloud needs at least 500 samples (N * M)")
    if cfg.kind == "metrics-check":
        dims = cfg.metric.get("dims", [1, 3])
        if not dims or any(not _is_int(x) or x < 1 for x in dims):
            bad("metric.dims", "dims must be positive integers")
    return out


# ---------------------------------------------------------------- builders

def make_kernel(cfg: ExperimentConfig):
    from .model import CollisionKernel
    kw = dict(cfg.kernel)
    variant = kw.pop("variant", "gmm")
    return CollisionKernel(variant, cfg.d, **kw)


def make_density(cfg: ExperimentConfig):
    from .sampling import ReferenceDensity
    kw = dict(cfg.initial)
    name = kw.pop("name")
    kw.pop("sampler", None)
    f0 = ReferenceDensity(name, cfg.d, kw)
    return f0.scaled_to_energy(cfg.E) if cfg.E is not None else f0


def make_sampler(cfg: ExperimentConfig, N: int):
    from .sampling import sample_sphere_conditioned, sample_tensorized, sample_uniform_sphere
    how = cfg.initial.get("sampler", "tensorized")
    if how == "uniform_sphere":
        return lambda rng: sample_uniform_sphere(N, cfg.E, cfg.d, rng)
    f0 = make_density(cfg)
    if how == "sphere":
        E = f0.energy
        return lambda rng: sample_sphere_conditioned(f0, N, E, rng)
    return lambda rng: sample_tensorized(f0, N, rng)


def resolve_threads(flag: int | None) -> int:
    if flag is None:
        env = os.environ.get(THREADS_ENV)
        flag = int(env) if env else 1
    if flag < 0:
        raise ValueError("thread count must be nonnegative")
    return flag or (os.cpu_count() or 1)


# ---------------------------------------------------------------- emission

class Emitter:
    """Tracks every file written so a failed run can be rolled back."""

    def __init__(self, out: Path):
        self.out = out
        self.created_dir = not out.exists()
        self.files: list[Path] = []

    def path(self, name: str) -> Path:
        p = self.out / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.files.append(p)
        return p

    def csv(self, name: str, header, rows) -> Path:
        p = self.path(name)
        with p.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(x) for x in row])
        return p

    def rollback(self):
        for p in self.files:
            if p.exists():
                p.unlink()
        if self.created_dir and self.out.exists():
            for d in sorted(self.out.rglob("*"), reverse=True):
                if d.is_dir() and not any(d.iterdir()):
                    d.rmdir()
            if not any(self.out.iterdir()):
                self.out.rmdir()


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    return x


# ---------------------------------------------------------------- drivers

def _ensemble(cfg, N, threads):
    from .kac import run_ensemble
    return run_ensemble(make_sampler(cfg, N), make_kernel(cfg), cfg.horizon, cfg.times, cfg.M,
                        cfg.seed, threads)


def run_simulate(cfg, em, threads):
    from .kac import write_snapshot
    rows = []
    for N in cfg.N:
        ens = _ensemble(cfg, N, threads)
        for r, rec in enumerate(ens.records):
            for k, (t, snap) in enumerate(zip(rec.times, rec.snapshots)):
                rows.append((r, float(t), N, int(rec.counts[k]), snap.energy,
                             float(np.max(np.abs(snap.momentum)))))
                if cfg.snapshots:
                    write_snapshot(em.path(f"snapshots/N{N}_r{r:05d}_c{k:03d}.kacs"), snap)
    em.csv("simulate.csv", SIMULATE_COLUMNS, rows)


def _series_rows(series):
    from .chaos import CSV_COLUMNS
    kern = series.kernel.get("variant", "")
    return CSV_COLUMNS, [(t, v, s, series.N, series.M, series.ell, series.metric, kern, series.seed)
                         for t, v, s in zip(series.times, series.values, series.stderr)]


def run_chaos(cfg, em, threads):
    from .chaos import chaos_series
    from .limit import dsmc_limit_oracle
    m, ref = cfg.metric, cfg.reference
    f0 = make_density(cfg)
    if ref.get("kind", "oracle") == "oracle":
        reference = dsmc_limit_oracle(f0, make_kernel(cfg), f0.energy, cfg.horizon, cfg.times,
                                      ref.get("N", 4096), ref.get("M", 1), ref.get("seed", cfg.seed),
                                      threads, cfg.initial.get("sampler", "tensorized") != "tensorized")
    else:
        reference = f0
    rows = []
    header = None
    for N in cfg.N:
        s = chaos_series(_ensemble(cfg, N, threads), reference, m.get("ell", 1), m.get("q", 1.0),
                         m.get("augment", False), m.get("bootstrap", 20), cfg.seed)
        header, part = _series_rows(s)
        rows += part
    em.csv("chaos.csv", header, rows)


def run_relaxation(cfg, em, threads):
    from .chaos import relaxation_series
    m = cfg.metric
    rows = []
    header = None
    for N in cfg.N:
        ens = _ensemble(cfg, N, threads)
        s = relaxation_series(ens, m.get("ell", 1), m.get("augment", False), m.get("bootstrap", 20),
                              cfg.seed, energy=cfg.E)
        header, part = _series_rows(s)
        rows += part
    em.csv("relaxation.csv", header, rows)


def run_lln(cfg, em, threads):
    from .chaos import lln_rate_experiment
    m = cfg.metric
    res = lln_rate_experiment(make_density(cfg), m.get("name", "w1"), cfg.N, cfg.M, cfg.seed,
                              m.get("s", 1.0))
    em.csv("lln.csv", ("N", "value", "stderr", "metric"),
           [(N, v, s, res.metric) for N, v, s in res.rows()])
    em.csv("lln_fit.csv", ("slope", "degenerate", "metric"), [(res.slope, res.degenerate, res.metric)])


def random_pair(d: int, n_max: int, rng):
    """Two random empirical measures in R^d of a common size in [1, n_max]."""
    from .metrics import WeightedPointMeasure
    n = int(rng.integers(1, n_max + 1))
    out = []
    for _ in range(2):
        scale = math.exp(rng.uniform(-1.0, 1.0))
        shift = rng.normal(size=d) * rng.uniform(0, 0.5)
        out.append(WeightedPointMeasure.empirical(scale * rng.normal(size=(n, d)) + shift))
    return out


def run_metrics_check(cfg, em, threads):
    from .metrics import check_comparisons
    from .rng import REFERENCE, stream
    m = cfg.metric
    dims = m.get("dims", [1, 3])
    items = tuple(m.get("items", ["i", "ii", "iii", "v"]))
    tol = m.get("tol", 1e-12)
    rows = []
    for p in range(m.get("pairs", 100)):
        d = dims[p % len(dims)]
        f, g = random_pair(d, m.get("n_max", 50), stream(cfg.seed, p, REFERENCE))
        for row in check_comparisons(f, g, items):
            rows.append((p, d, max(f.size, g.size), row.item, row.lhs, row.rhs, row.slack,
                         row.passed(tol)))
    em.csv("metrics_check.csv", METRICS_COLUMNS, rows)
    failed = sum(1 for r in rows if not r[-1])
    if failed:
        raise RuntimeError(f"{failed} comparison rows violated")


def run_entropy_track(cfg, em, threads):
    from . import entropy as En
    from . import limit as L
    s = cfg.solver
    if s.get("source", "spectral") == "particles":
        g = L.Maxwellian(cfg.E if cfg.E is not None else make_density(cfg).energy, cfg.d)
        rows = []
        for N in cfg.N:
            ens = _ensemble(cfg, N, threads)
            for t in ens.checkpoints:
                r = En.marginal_entropy_estimate(ens.velocities(t).reshape(-1, cfg.d), g,
                                                 k=cfg.metric.get("k", 4),
                                                 bootstrap=cfg.metric.get("bootstrap", 200),
                                                 seed=cfg.seed)
                rows.append((float(t), r["relative_entropy"], r["ci"][0], r["ci"][1], r["stderr"], r["n"]))
        em.csv("entropy_knn.csv", KNN_COLUMNS, rows)
        return
    coeffs = s.get("coeffs", [1.0, 0.0, 1.0])
    T = s.get("T", 1.0)
    kernel = make_kernel(cfg)
    E = L.polynomial_gaussian_energy(coeffs, T)
    F0 = L.fourier_initial(L.polynomial_gaussian_transform(coeffs, T), s.get("L", 4), E,
                           s.get("n_r", 64))
    traj = L.evolve_fourier(F0, kernel, cfg.horizon, s.get("dt", 0.05), s.get("every", 5),
                            s.get("n_theta", 32))
    gamma = L.Maxwellian(E, 3)
    report = En.EntropyReport()
    budget = s.get("mc_budget", 0)
    for F in traj:
        f = F.to_velocity()
        H = En.relative_entropy(f, gamma)
        D = En.entropy_production(f, kernel, budget, cfg.seed) if budget else None
        report.add(F.time, H, *(D if D else (math.nan, math.nan)))
    p = em.path("entropy.csv")
    report.write_csv(p)


DRIVERS = {"simulate": run_simulate, "chaos": run_chaos, "relaxation": run_relaxation,
           "lln": run_lln, "metrics-check": run_metrics_check, "entropy-track": run_entropy_track}


def run(cfg: ExperimentConfig, threads: int = 1) -> int:
    """Run one experiment; 0 iff every requested series was written."""
    diags = validate(cfg)
    if diags:
        for d in diags:
            print(d, file=sys.stderr)
        return 2
    em = Emitter(Path(cfg.out))
    em.out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        DRIVERS[cfg.kind](cfg, em, threads)
        meta = {"config": cfg.to_dict(), "version": __version__, "threads": threads,
                "wall_clock_seconds": time.perf_counter() - t0,
                "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
                "outputs": sorted(str(p.relative_to(em.out)) for p in em.files)}
        em.path("metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    except Exception as exc:
        em.rollback()
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------- argument parsing

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kacchaos", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in KINDS + ("validate",):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, type=Path, help="TOML experiment recipe")
        sp.add_argument("--seed", type=int, help="override the master seed")
        sp.add_argument("--out", type=Path, help="override the output directory")
        sp.add_argument("--threads", type=int,
                        help=f"worker threads, 0 = all cores (fallback: ${THREADS_ENV})")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg, diags, lines = load_config(args.config)
    if cfg is not None:
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, seed=args.seed)
        if args.out is not None:
            cfg = dataclasses.replace(cfg, out=str(args.out))
        if args.command != "validate" and cfg.kind != args.command:
            diags.append(Diagnostic(f"config describes a {cfg.kind!r} experiment, not {args.command!r}",
                                    "kind", lines.get("kind"), str(args.config)))
        diags += validate(cfg, lines, str(args.config))
    if args.command == "validate" or diags:
        for d in diags:
            print(d, file=sys.stderr if args.command != "validate" else sys.stdout)
        return 0 if not diags else 2
    try:
        threads = resolve_threads(args.threads)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return run(cfg, threads)


if __name__ == "__main__":
    sys.exit(main())
