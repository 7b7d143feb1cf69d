"""Event-driven simulation of the N-particle Kac jump process.

Time is already rescaled: the total jump rate of a state is
``(1/N) * sum_{i<j} Gamma(|v_i - v_j|) * A`` with ``A`` the angular mass of
the kernel, so each particle collides O(1) times per unit time.

Pair selection for hard spheres runs in one of two modes:

* ``"exact"`` keeps every pair rate in a binary-indexed tree (O(N log N) update
  per collision, O(log N) sampling);
* ``"rejection"`` draws uniform candidate pairs at the majorant rate built on
  ``|v_i - v_j| <= 2 max_k |v_k|`` and thins them.

All randomness comes from one uniform stream per trajectory, consumed in a
fixed order, so a trajectory depends only on its seed.
"""
from __future__ import annotations

import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numba import njit

from . import _kernels
from ._kernels import GMM, HS, TMM  # noqa: F401
from .model import CollisionKernel, ParticleState
from .rng import DYNAMICS, INITIAL, as_generator, stream

EXACT = 0
REJECTION = 1
EXACT_MAX_N = 4096

ST_CHECKPOINT = 0
ST_BUFFER = 1
ST_MAX_EVENTS = 2
ST_ABSORBED = 3

_BLOCK = 8192


# ---------------------------------------------------------------- compiled core

@njit(cache=True, nogil=True)
def _pair_index(N, i, j):
    if i > j:
        i, j = j, i
    return i * N - (i * (i + 1)) // 2 + (j - i - 1)


@njit(cache=True, nogil=True)
def _unpair(N, k):
    lo = 0
    hi = N - 1
    # largest i with row_start(i) <= k
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if mid * N - (mid * (mid + 1)) // 2 <= k:
            lo = mid
        else:
            hi = mid
    if (hi * N - (hi * (hi + 1)) // 2) <= k and hi < N - 1:
        lo = hi
    start = lo * N - (lo * (lo + 1)) // 2
    return lo, lo + 1 + (k - start)


@njit(cache=True, nogil=True)
def _dist(V, i, j):
    s = 0.0
    for k in range(V.shape[1]):
        x = V[i, k] - V[j, k]
        s += x * x
    return math.sqrt(s)


@njit(cache=True, nogil=True)
def _fw_build(leaves, tree):
    P = leaves.shape[0]
    tree[0] = 0.0
    for k in range(P):
        tree[k + 1] = leaves[k]
    for k in range(1, P + 1):
        parent = k + (k & (-k))
        if parent <= P:
            tree[parent] += tree[k]
    # compensated total
    s = 0.0
    c = 0.0
    for k in range(P):
        y = leaves[k] - c
        t = s + y
        c = (t - s) - y
        s = t
    return s


@njit(cache=True, nogil=True)
def _fw_add(tree, k0, delta):
    P = tree.shape[0] - 1
    k = k0 + 1
    while k <= P:
        tree[k] += delta
        k += k & (-k)


@njit(cache=True, nogil=True)
def _fw_search(tree, value):
    P = tree.shape[0] - 1
    pos = 0
    bit = 1
    while bit * 2 <= P:
        bit *= 2
    while bit > 0:
        nxt = pos + bit
        if nxt <= P and tree[nxt] < value:
            pos = nxt
            value -= tree[nxt]
        bit //= 2
    if pos >= P:
        pos = P - 1
    return pos


@njit(cache=True, nogil=True)
def _build_table(V, leaves, tree):
    N = V.shape[0]
    for i in range(N):
        for j in range(i + 1, N):
            leaves[_pair_index(N, i, j)] = _dist(V, i, j)
    return _fw_build(leaves, tree)


@njit(cache=True, nogil=True)
def _vmax(V):
    m = 0.0
    for i in range(V.shape[0]):
        s = 0.0
        for k in range(V.shape[1]):
            s += V[i, k] * V[i, k]
        if s > m:
            m = s
    return math.sqrt(m)


@njit(cache=True, nogil=True)
def _advance(V, kind, gcoef, amass, theta_tab, cdf_tab, mode, leaves, tree,
             fl, il, U, t_stop, max_events, sigma, uhat):
    """Run jumps until ``t_stop``, buffer exhaustion or ``max_events``.

    fl = [time, pending jump time (nan if none), table total or vmax]
    il = [buffer position, events, events since rebuild, last i, last j]
    """
    N = V.shape[0]
    d = V.shape[1]
    need = 4 + 2 * ((d + 1) // 2) + 1
    rebuild_every = max(4 * N, 1024)
    done = 0
    while True:
        if done >= max_events:
            return ST_MAX_EVENTS
        pos = il[0]
        if pos + need > U.shape[0]:
            return ST_BUFFER
        if kind != HS:
            rate = 0.5 * (N - 1) * amass
        elif mode == EXACT:
            rate = gcoef * amass * fl[2] / N
        else:
            rate = 0.5 * (N - 1) * gcoef * 2.0 * fl[2] * amass
        if not (rate > 0.0):
            return ST_ABSORBED
        if math.isnan(fl[1]):
            fl[1] = fl[0] - math.log(1.0 - U[pos]) / rate
            pos += 1
            il[0] = pos
        if fl[1] > t_stop:
            return ST_CHECKPOINT
        fl[0] = fl[1]
        fl[1] = math.nan
        if kind == HS and mode == EXACT:
            k = _fw_search(tree, U[pos] * fl[2])
            pos += 1
            i, j = _unpair(N, k)
        else:
            i = int(U[pos] * N)
            j = int(U[pos + 1] * (N - 1))
            pos += 2
            if i >= N:
                i = N - 1
            if j >= N - 1:
                j = N - 2
            if j >= i:
                j += 1
            if kind == HS:
                accept = U[pos]
                pos += 1
                vm = fl[2]
                if accept * 2.0 * vm >= _dist(V, i, j):
                    il[0] = pos
                    continue
        z = _dist(V, i, j)
        if z > 0.0:
            for q in range(d):
                uhat[q] = (V[i, q] - V[j, q]) / z
        else:
            for q in range(d):
                uhat[q] = 0.0
            uhat[0] = 1.0
        pos = _kernels.sigma_from_uniforms(kind, uhat, theta_tab, cdf_tab, U, pos, sigma)
        il[0] = pos
        _kernels.collide_inplace(V, i, j, sigma)
        il[1] += 1
        il[3] = i
        il[4] = j
        done += 1
        if kind == HS:
            if mode == EXACT:
                total = fl[2]
                for m in range(N):
                    if m != i:
                        kk = _pair_index(N, i, m)
                        new = _dist(V, i, m)
                        delta = new - leaves[kk]
                        leaves[kk] = new
                        _fw_add(tree, kk, delta)
                        total += delta
                    if m != j and m != i:
                        kk = _pair_index(N, j, m)
                        new = _dist(V, j, m)
                        delta = new - leaves[kk]
                        leaves[kk] = new
                        _fw_add(tree, kk, delta)
                        total += delta
                fl[2] = total
                il[2] += 1
                if il[2] >= rebuild_every:
                    fl[2] = _fw_build(leaves, tree)
                    il[2] = 0
            else:
                si = 0.0
                sj = 0.0
                for q in range(d):
                    si += V[i, q] * V[i, q]
                    sj += V[j, q] * V[j, q]
                m2 = math.sqrt(max(si, sj))
                if m2 > fl[2]:
                    fl[2] = m2
                il[2] += 1
                if il[2] >= N:
                    fl[2] = _vmax(V)
                    il[2] = 0


# ---------------------------------------------------------------- python layer

@dataclass(frozen=True)
class JumpEvent:
    time: float
    pair: tuple[int, int]
    sigma: np.ndarray


@dataclass
class TrajectoryRecord:
    times: np.ndarray
    snapshots: list[ParticleState]
    collisions: int
    counts: np.ndarray  # collisions up to each checkpoint
    seed: dict = field(default_factory=dict)
    absorbed: bool = False

    def velocities(self) -> np.ndarray:
        return np.stack([s.velocities for s in self.snapshots])


def default_mode(kernel: CollisionKernel, n: int) -> str:
    if kernel.variant != "hs":
        return "uniform"
    return "exact" if n <= EXACT_MAX_N else "rejection"


class _Process:
    """Mutable simulation state around the compiled event loop."""

    def __init__(self, state: ParticleState, kernel: CollisionKernel, rng, mode: str | None = None):
        if state.n < 2:
            raise ValueError("the jump process needs N >= 2")
        if state.d != kernel.d:
            raise ValueError("state and kernel dimensions differ")
        self.kernel = kernel
        self.rng = as_generator(rng)
        self.V = state.velocities.copy()
        self.mode_name = mode or default_mode(kernel, state.n)
        self.mode = REJECTION if self.mode_name == "rejection" else EXACT
        N = state.n
        self.theta, self.cdf = kernel.theta_table
        self.fl = np.array([state.time, math.nan, 0.0])
        self.il = np.zeros(5, dtype=np.int64)
        self.sigma = np.zeros(kernel.d)
        self.uhat = np.zeros(kernel.d)
        if kernel.variant == "hs" and self.mode == EXACT:
            P = N * (N - 1) // 2
            self.leaves = np.zeros(P)
            self.tree = np.zeros(P + 1)
            self.fl[2] = _build_table(self.V, self.leaves, self.tree)
        else:
            self.leaves = np.zeros(1)
            self.tree = np.zeros(2)
            if kernel.variant == "hs":
                self.fl[2] = _vmax(self.V)
        self.U = np.zeros(0)
        self.absorbed = False

    @property
    def time(self) -> float:
        return float(self.fl[0])

    @property
    def events(self) -> int:
        return int(self.il[1])

    def table_total(self) -> float:
        return float(self.fl[2])

    def run(self, t_stop: float, max_events: int = 2 ** 62) -> int:
        k = self.kernel
        start = self.events
        while True:
            remaining = max_events - (self.events - start)
            status = _advance(self.V, k.kind, k.speed_coefficient, k.angular_mass, self.theta, self.cdf,
                              self.mode, self.leaves, self.tree, self.fl, self.il, self.U,
                              float(t_stop), remaining, self.sigma, self.uhat)
            if status == ST_BUFFER:
                pos = int(self.il[0])
                self.U = np.concatenate([self.U[pos:], self.rng.random(_BLOCK)])
                self.il[0] = 0
                continue
            if status == ST_ABSORBED:
                self.absorbed = True
            return status

    def state(self, time: float | None = None) -> ParticleState:
        return ParticleState(self.V.copy(), self.time if time is None else time)


def total_rate(state: ParticleState, kernel: CollisionKernel) -> float:
    """Total jump rate ``(1/N) sum_{i<j} Gamma(|v_i - v_j|) A`` of a state."""
    N = state.n
    if N < 2:
        raise ValueError("total_rate needs N >= 2")
    A = kernel.angular_mass
    if kernel.variant != "hs":
        return 0.5 * (N - 1) * A
    V = state.velocities
    s = 0.0
    for i in range(N - 1):
        s += math.fsum(np.sqrt(((V[i + 1:] - V[i]) ** 2).sum(axis=1)))
    return kernel.speed_coefficient * A * s / N


def step(state: ParticleState, kernel: CollisionKernel, rng=None, mode: str | None = None):
    """Perform one jump; returns ``(JumpEvent, new state)``.

    An absorbed state (zero total rate) returns ``(None, state)``.
    """
    proc = _Process(state, kernel, rng, mode)
    status = proc.run(math.inf, max_events=1)
    if status == ST_ABSORBED:
        return None, state
    i, j = int(proc.il[3]), int(proc.il[4])
    ev = JumpEvent(proc.time, (min(i, j), max(i, j)), proc.sigma.copy())
    return ev, proc.state()


def advance(state: ParticleState, kernel: CollisionKernel, n_events: int, rng=None,
            mode: str | None = None) -> ParticleState:
    """Run exactly ``n_events`` jumps (fewer only if the state is absorbed)."""
    proc = _Process(state, kernel, rng, mode)
    proc.run(math.inf, max_events=int(n_events))
    return proc.state()


def simulate(initial: ParticleState, kernel: CollisionKernel, horizon: float,
             checkpoints: Sequence[float], rng=None, mode: str | None = None,
             seed: dict | None = None) -> TrajectoryRecord:
    """Simulate on ``[initial.time, horizon]``, snapshotting at each checkpoint.

    The snapshot at ``c`` is the state after every jump with time ``<= c``.
    """
    cps = np.asarray(list(checkpoints), dtype=float)
    t0 = initial.time
    if cps.size and (np.any(np.diff(cps) < 0) or cps[0] < t0 or cps[-1] > horizon):
        raise ValueError("checkpoints must be sorted and lie in [t0, horizon]")
    proc = _Process(initial, kernel, rng, mode)
    snaps = []
    counts = []
    for c in cps:
        if not proc.absorbed:
            proc.run(c)
        snaps.append(proc.state(float(c)))
        counts.append(proc.events)
    if not proc.absorbed:
        proc.run(horizon)
    return TrajectoryRecord(cps, snaps, proc.events, np.array(counts, dtype=np.int64),
                            dict(seed or {}), proc.absorbed)


@dataclass
class Ensemble:
    """Independent replicas sharing kernel, horizon and checkpoints."""

    records: list[TrajectoryRecord]
    kernel: CollisionKernel
    horizon: float
    checkpoints: np.ndarray
    master_seed: int

    @property
    def replicas(self) -> int:
        return len(self.records)

    @property
    def n(self) -> int:
        return self.records[0].snapshots[0].n if self.records[0].snapshots else 0

    def checkpoint_index(self, t: float) -> int:
        hits = np.flatnonzero(np.isclose(self.checkpoints, t, rtol=0, atol=1e-12))
        if hits.size == 0:
            raise KeyError(f"time {t} is not a checkpoint")
        return int(hits[0])

    def velocities(self, t: float) -> np.ndarray:
        """Array ``(M, N, d)`` of replica velocities at checkpoint ``t``."""
        k = self.checkpoint_index(t)
        return np.stack([r.snapshots[k].velocities for r in self.records])

    def collision_counts(self) -> np.ndarray:
        return np.array([r.collisions for r in self.records], dtype=np.int64)


def run_ensemble(sampler: Callable[[np.random.Generator], ParticleState], kernel: CollisionKernel,
                 horizon: float, checkpoints: Sequence[float], replicas: int, master_seed: int,
                 threads: int = 1, mode: str | None = None, replica_offset: int = 0) -> Ensemble:
    """Run ``replicas`` independent trajectories.

    Replica ``r`` samples its initial state from ``stream(master_seed, k, INITIAL)``
    and its dynamics from ``stream(master_seed, k, DYNAMICS)`` with
    ``k = replica_offset + r``.
    """
    if replicas < 1:
        raise ValueError("need at least one replica")
    cps = np.asarray(list(checkpoints), dtype=float)

    def one(r):
        k = replica_offset + r
        init = sampler(stream(master_seed, k, INITIAL))
        return simulate(init, kernel, horizon, cps, stream(master_seed, k, DYNAMICS), mode,
                        seed={"master_seed": master_seed, "replica": k})

    if threads == 1:
        recs = [one(r) for r in range(replicas)]
    else:
        with ThreadPoolExecutor(max_workers=threads or None) as pool:
            recs = list(pool.map(one, range(replicas)))
    return Ensemble(recs, kernel, float(horizon), cps, master_seed)


# ---------------------------------------------------------------- snapshots

SNAPSHOT_MAGIC = b"KACS"
SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<4sHHQdd")


def write_snapshot(path, state: ParticleState) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, state.d, state.n,
                              float(state.time), float(state.energy)))
        fh.write(state.velocities.astype("<f8").tobytes())


def read_snapshot(path) -> ParticleState:
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, version, d, n, time, energy = _HEADER.unpack_from(raw)
    if magic != SNAPSHOT_MAGIC:
        raise ValueError("not a KACS snapshot")
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if body.size != d * n:
        raise ValueError("truncated snapshot")
    return ParticleState(body.reshape(n, d).astype(float), time)
