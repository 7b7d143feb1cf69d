"""Exit criteria. Each test records one PASS/FAIL line, printed in the terminal summary."""
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from kacchaos import chaos as Ch
from kacchaos import entropy as En
from kacchaos import kac
from kacchaos import limit as L
from kacchaos.cli import random_pair
from kacchaos.metrics import check_comparisons
from kacchaos.model import CollisionKernel
from kacchaos.rng import ORACLE, REFERENCE, stream
from kacchaos.sampling import (chaos_baseline, density, sample_sphere_conditioned,
                               sample_tensorized, sample_uniform_sphere)

pytestmark = pytest.mark.acceptance

GMM = CollisionKernel.gmm()
HS = CollisionKernel.hs()


def record(n, title, ok, detail, elapsed, budget):
    ok = bool(ok) and elapsed < budget
    line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'} {title}: {detail} ({elapsed:.1f}s of {budget:.0f}s)"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_c01_conservation():
    t0 = time.perf_counter()
    f0 = density("uniform_ball")
    s0 = sample_sphere_conditioned(f0, 64, 3.0, stream(1))
    s1 = kac.advance(s0, GMM, 10 ** 6, stream(1, 0, 1))
    e0, e1 = s0.energy, s1.energy
    drift_e = abs(e1 - e0) / e0
    # momentum starts at rounding level, so its drift is measured against the speed scale
    drift_p = float(np.max(np.abs(s1.momentum - s0.momentum))) / math.sqrt(e0)
    record(1, "conservation", max(drift_e, drift_p) <= 1e-9,
           f"energy drift {drift_e:.2e}, momentum drift {drift_p:.2e}",
           time.perf_counter() - t0, 60)


def test_c02_sphere_invariance():
    t0 = time.perf_counter()
    cps = [0.0, 2.0, 4.0, 6.0, 8.0, 10.0]
    rec = kac.simulate(sample_uniform_sphere(128, 1.0, 3, stream(2)), HS, 10.0, cps, stream(2, 0, 1))
    worst = 0.0
    for snap in rec.snapshots:
        worst = max(worst, abs(snap.energy - 1.0), float(np.max(np.abs(snap.momentum))))
    record(2, "sphere invariance", worst <= 1e-9, f"max deviation {worst:.2e} over {rec.collisions} jumps",
           time.perf_counter() - t0, 60)


def test_c03_poisson_clock():
    t0 = time.perf_counter()
    f0 = density("trunc_gauss")
    ens = kac.run_ensemble(lambda r: sample_tensorized(f0, 10, r), GMM, 1.0, [1.0], 10 ** 4, 3)
    counts = ens.collision_counts().astype(float)
    mean, var = counts.mean(), counts.var(ddof=1)
    target = 9 * math.pi
    se = math.sqrt(target / counts.size)
    disp = var / mean
    record(3, "Poisson clock", abs(mean - target) <= 3 * se and 0.94 <= disp <= 1.06,
           f"mean {mean:.3f} vs {target:.3f} (3se {3 * se:.3f}), dispersion {disp:.3f}",
           time.perf_counter() - t0, 120)


def test_c04_lln_identity():
    t0 = time.perf_counter()
    est = chaos_baseline(density("trunc_gauss", 1), 100, 2000, "hdot", 4)
    target = 2 * math.sqrt(math.pi) / 100
    record(4, "exact LLN identity", abs(est.value - target) <= 3 * est.stderr,
           f"{est.value:.6f} +- {est.stderr:.6f} vs {target:.6f}", time.perf_counter() - t0, 120)


def test_c05_lln_w1_rate():
    t0 = time.perf_counter()
    res = Ch.lln_rate_experiment(density("uniform_ball", 1), "w1", (100, 1000, 10000), 500, 5)
    record(5, "LLN W1 rate", -0.6 <= res.slope <= -0.4, f"slope {res.slope:.4f}",
           time.perf_counter() - t0, 300)


def test_c06_fourier_contraction():
    t0 = time.perf_counter()
    rng = stream(6, 0, ORACLE)

    def random_mixture():
        w = rng.dirichlet(np.ones(3))
        T = rng.uniform(0.2, 2.5, 3)
        T /= w @ T
        return L.fourier_initial(L.gaussian_mixture_transform(w, T), 0, 3.0, 96)

    worst = -math.inf
    for _ in range(5):
        f, g = random_mixture(), random_mixture()
        d0 = f.fourier_sup_distance(g, 2)
        tf = L.evolve_fourier(f, GMM, 5.0, 0.05, 5)
        tg = L.evolve_fourier(g, GMM, 5.0, 0.05, 5)
        sup = max(a.fourier_sup_distance(b, 2) for a, b in zip(tf, tg))
        worst = max(worst, sup - d0)
    record(6, "Fourier contraction", worst <= 1e-3, f"max excess {worst:.2e}",
           time.perf_counter() - t0, 180)


def test_c07_moment_decay():
    t0 = time.perf_counter()
    co = L.moment_ode_coefficients(GMM, 4)
    c = [1.0, -0.6, 0.5, 0.2, 0.25]
    E = L.polynomial_gaussian_energy(c)
    F0 = L.fourier_initial(L.polynomial_gaussian_transform(c), 4, E, 64)
    traj = L.evolve_fourier(F0, GMM, 2.0, 0.02, 5)
    ref = L.evolve_moments(F0.moments(3), co, 2.0, 0.02, 5)
    ts, y, err = [], [], 0.0
    for F, (_, M) in zip(traj, ref):
        m = F.moments(3)
        ts.append(F.time)
        y.append(m[(2, 0, 0)] - m[(0, 2, 0)])
        err = max(err, float(np.max(np.abs(m.array() - M.array()))))
    rate = -np.polyfit(ts, np.log(np.abs(y)), 1)[0]
    expected = -co.traceless_rate()
    rel = abs(rate - expected) / expected
    record(7, "moment decay", rel <= 0.05 and err <= 1e-4,
           f"rate {rate:.5f} vs {expected:.5f} (rel {rel:.1e}), moment mismatch {err:.1e}",
           time.perf_counter() - t0, 120)


def test_c08_chaos_trend():
    t0 = time.perf_counter()
    f0 = density("two_temperature", p=0.96875, s1=0.001, s2=1.0).scaled_to_energy(3.0)
    cps = [0.0, 0.5, 1.0]
    oracle = L.dsmc_limit_oracle(f0, GMM, None, 1.0, cps, 65536, 1, seed=7)
    sups = []
    for N in (16, 32, 64, 128):
        ens = kac.run_ensemble(lambda r: sample_sphere_conditioned(f0, N, 3.0, r), GMM, 1.0, cps, 500, 3)
        sups.append(Ch.chaos_series(ens, oracle, augment=True, bootstrap=10, seed=3).sup())
    inversions = [(a, b) for a, b in zip(sups, sups[1:]) if b.value > a.value]
    mild = all(b.value - a.value <= 3 * math.hypot(a.stderr, b.stderr) for a, b in inversions)
    ratio = sups[-1].value / sups[0].value
    record(8, "chaos trend", len(inversions) <= 1 and mild and ratio < 0.5,
           f"sups {[round(s.value, 4) for s in sups]}, N=128/N=16 ratio {ratio:.3f}",
           time.perf_counter() - t0, 900)


def test_c09_relaxation():
    t0 = time.perf_counter()
    f0 = density("two_point", a=1.0)
    cps = [0.0, 0.5, 1.0, 2.0, 5.0]
    prof = {}
    for N in (32, 128):
        ens = kac.run_ensemble(lambda r: sample_sphere_conditioned(f0, N, 1.0, r), HS, 5.0, cps, 1000, 2)
        prof[N] = np.array(Ch.relaxation_series(ens, augment=True, bootstrap=0, seed=2, energy=1.0).values)
    decay = max(p[-1] / p[0] for p in prof.values())
    r = prof[128] / prof[32]
    record(9, "N-uniform relaxation", decay < 0.2 and np.all((r >= 0.5) & (r <= 2.0)),
           f"t=5/t=0 {decay:.3f}, profile ratios {np.round(r, 3).tolist()}",
           time.perf_counter() - t0, 900)


def test_c10_h_theorem():
    t0 = time.perf_counter()
    c = [1.0, 0.0, 1.0]
    E = L.polynomial_gaussian_energy(c)
    F0 = L.fourier_initial(L.polynomial_gaussian_transform(c), 4, E, 64)
    traj = L.evolve_fourier(F0, GMM, 10.0, 0.05, 5, n_theta=32)
    g = L.Maxwellian(E, 3)
    H = np.array([En.relative_entropy(F.to_velocity(), g) for F in traj])
    rise = float(np.max(np.diff(H)))
    record(10, "H-theorem", rise <= 1e-8 and H[-1] < 1e-3,
           f"H(0) {H[0]:.3f}, H(10) {H[-1]:.2e}, largest step increase {rise:.1e}",
           time.perf_counter() - t0, 120)


def test_c11_entropic_chaos():
    t0 = time.perf_counter()
    f0 = density("bimodal", m=1.5, s=0.3).scaled_to_energy(3.0)
    cps = [0.0, 0.05, 0.1, 0.2, 0.4]
    ens = kac.run_ensemble(lambda r: sample_sphere_conditioned(f0, 128, 3.0, r), HS, 0.4, cps, 20, 11)
    g = L.Maxwellian(3.0, 3)
    res = [En.marginal_entropy_estimate(ens.velocities(t).reshape(-1, 3), g, seed=11) for t in cps]
    H = [r["relative_entropy"] for r in res]
    ups = sum(b["relative_entropy"] > a["ci"][1] for a, b in zip(res, res[1:]))
    record(11, "entropic chaos proxy", ups <= 1 and H[-1] < H[0],
           f"H {[round(h, 3) for h in H]}, CI-exceeding increases {ups}",
           time.perf_counter() - t0, 600)


def test_c12_metric_comparisons():
    t0 = time.perf_counter()
    rows = violations = 0
    for p in range(1000):
        d = (1, 3)[p % 2]
        f, g = random_pair(d, 50, stream(12, p, REFERENCE))
        for row in check_comparisons(f, g, ("i", "ii", "iii", "v")):
            rows += 1
            violations += not row.passed(1e-12)
    record(12, "metric comparisons", violations == 0, f"{rows} rows, {violations} violations",
           time.perf_counter() - t0, 180)
