import math

import numpy as np
import pytest

from kacchaos import entropy as En
from kacchaos import kac
from kacchaos import limit as L
from kacchaos.model import CollisionKernel
from kacchaos.rng import stream
from kacchaos.sampling import density, sample_sphere_conditioned

GMM = CollisionKernel.gmm()


def gauss_grid(var, d, n=None, R=16.0):
    return L.density_on_grid(L.Maxwellian(var * d, d).density, d, L.velocity_box(d, var * d, n=n, R=R))


def mixture_grid(rng, d=1):
    w = rng.dirichlet(np.ones(3))
    s = rng.uniform(0.3, 2.0, 3)
    m = rng.normal(size=3) * 0.8

    def f(v):
        x = v[..., 0]
        return sum(wk * np.exp(-0.5 * ((x - mk) / sk) ** 2) / (sk * math.sqrt(2 * math.pi))
                   for wk, sk, mk in zip(w, s, m))

    return L.density_on_grid(f, 1, L.velocity_box(1, 1.0, n=1601, R=12.0))


def test_relative_entropy_examples():
    g = L.maxwellian_density(3.0, 3)
    assert abs(En.relative_entropy(g, L.Maxwellian(3.0, 3))) < 1e-10
    f = gauss_grid(2.0, 1, n=801)
    assert En.relative_entropy(f, L.Maxwellian(1.0, 1)) == pytest.approx(0.5 * (2 - 1 - math.log(2)), abs=1e-8)


def test_relative_entropy_nonnegative_on_mixtures():
    rng = stream(3)
    for _ in range(100):
        assert En.relative_entropy(mixture_grid(rng), L.Maxwellian(1.0, 1)) >= -1e-10


def test_relative_entropy_zero_iff_equal():
    g = L.Maxwellian(1.0, 1)
    assert abs(En.relative_entropy(gauss_grid(1.0, 1, n=801), g)) < 1e-10
    for f0 in [density("bimodal", d=1), density("two_temperature", d=1)]:
        f0 = f0.scaled_to_energy(1.0)
        f = L.density_on_grid(lambda v: _pdf(f0, v), 1, L.velocity_box(1, 1.0, n=1601, R=12.0))
        assert En.relative_entropy(f, g) > 1e-3


def _pdf(f0, v):
    x = v[..., 0]
    p = f0.params
    if f0.name == "bimodal":
        return 0.5 * sum(np.exp(-0.5 * ((x - s * p["m"]) / p["s"]) ** 2) for s in (1, -1)) / (p["s"] * math.sqrt(2 * math.pi))
    return sum(w * np.exp(-0.5 * (x / s) ** 2) / (s * math.sqrt(2 * math.pi))
               for w, s in ((p["p"], p["s1"]), (1 - p["p"], p["s2"])))


def test_relative_entropy_rejects_negative():
    g = L.maxwellian_density(1.0, 1)
    g.values[10] = -1e-6
    with pytest.raises(ValueError, match="negative"):
        En.relative_entropy(g, L.Maxwellian(1.0, 1))


def test_fisher_examples():
    assert En.fisher_information(L.maxwellian_density(3.0, 3)) == pytest.approx(3.0, abs=1e-4)
    f = gauss_grid(2.0, 1, n=801)
    assert En.fisher_information(f) == pytest.approx(0.5, abs=1e-4)


def test_fisher_scaling():
    lam = 1.5
    ax = np.linspace(-12, 12, 961)
    base = L.Maxwellian(2.0, 2)
    f = L.density_on_grid(base.density, 2, {"axis": ax, "R": 12.0})
    g = L.density_on_grid(lambda v: lam ** 2 * base.density(lam * v), 2, {"axis": ax, "R": 12.0})
    assert En.fisher_information(g) == pytest.approx(lam ** 2 * En.fisher_information(f), rel=1e-6)


def test_fisher_rejects_zero_interior():
    g = L.maxwellian_density(1.0, 1)
    g.values[100] = 0.0
    with pytest.raises(ValueError, match="positive"):
        En.fisher_information(g)


def test_fisher_relative_to_maxwellian():
    g = L.maxwellian_density(3.0, 3)
    assert En.fisher_information(g, relative_to=L.Maxwellian(3.0, 3)) < 1e-6


def test_production_equilibrium():
    est = En.entropy_production(L.maxwellian_density(3.0, 3), GMM, 20_000, seed=1)
    assert abs(est.value) <= 3 * est.stderr + 1e-12


@pytest.fixture(scope="module")
def aniso_traj():
    c = [1.0, -0.6, 0.5, 0.2, 0.25]
    E = L.polynomial_gaussian_energy(c)
    F = L.fourier_initial(L.polynomial_gaussian_transform(c), 4, E, 64)
    traj = L.evolve_fourier(F, GMM, 2.0, 0.05, 20)
    return E, [G.to_velocity() for G in traj]


def test_production_positive_and_decreasing(aniso_traj):
    E, fs = aniso_traj
    D = [En.entropy_production(f, GMM, 20_000, seed=2) for f in fs]
    assert all(d.value >= -3 * d.stderr for d in D)
    assert D[-1].value < D[0].value


def test_production_matches_entropy_slope(aniso_traj):
    E, fs = aniso_traj
    g = L.Maxwellian(E, 3)
    H = [En.relative_entropy(f, g) for f in fs]
    assert all(b <= a + 1e-8 for a, b in zip(H, H[1:]))
    # centred difference of H at t = 1 against D(f_1)
    c = [1.0, -0.6, 0.5, 0.2, 0.25]
    F = L.fourier_initial(L.polynomial_gaussian_transform(c), 4, E, 64)
    traj = L.evolve_fourier(F, GMM, 1.05, 0.05, 1)
    h = [En.relative_entropy(traj[k].to_velocity(), g) for k in (19, 21)]
    slope = (h[1] - h[0]) / 0.1
    D = En.entropy_production(fs[1], GMM, 100_000, seed=3)
    assert D.value == pytest.approx(-slope, rel=0.05)


def test_production_needs_grid():
    with pytest.raises(TypeError):
        En.entropy_production(np.zeros((10, 3)), GMM)


def test_knn_examples():
    # each interval is a 95% one, so ask for coverage in most of several runs
    g = L.Maxwellian(1.0, 1)
    target = 0.5 * (1 - math.log(2))
    same = cover = 0
    for s in range(6):
        r = En.marginal_entropy_estimate(g.sample(4000, stream(1 + s)), g, seed=s)
        same += r["ci"][0] <= 0.0 <= r["ci"][1]
        x = math.sqrt(2) * stream(20 + s).normal(size=(4000, 1))
        r = En.marginal_entropy_estimate(x, g, seed=s)
        cover += r["ci"][0] <= target <= r["ci"][1]
    assert same >= 5 and cover >= 5


def test_knn_calibration_removes_bias_in_3d():
    g = L.Maxwellian(3.0, 3)
    vals = [En.marginal_entropy_estimate(g.sample(4000, stream(40 + s)), g, bootstrap=50, seed=s)
            for s in range(6)]
    assert abs(np.mean([r["relative_entropy"] for r in vals])) < 0.015
    assert all(r["bias_correction"] < 0 for r in vals)


def test_knn_permutation_invariant():
    x = stream(4).normal(size=(800, 3))
    g = L.Maxwellian(3.0, 3)
    a = En.marginal_entropy_estimate(x, g, seed=5)
    b = En.marginal_entropy_estimate(x[stream(6).permutation(800)], g, seed=5)
    assert a == b


def test_knn_duplicates_and_size():
    x = stream(4).normal(size=(600, 3))
    x[1] = x[0]
    r = En.marginal_entropy_estimate(x, L.Maxwellian(3.0, 3))
    assert r["flags"].get("jittered")
    with pytest.raises(ValueError):
        En.marginal_entropy_estimate(x[:100], L.Maxwellian(3.0, 3))


def test_knn_downward_trend_hs():
    f0 = density("bimodal", m=1.5, s=0.3).scaled_to_energy(3.0)
    cps = [0.0, 0.05, 0.1, 0.2, 0.4]
    e = kac.run_ensemble(lambda r: sample_sphere_conditioned(f0, 64, 3.0, r), CollisionKernel.hs(),
                         0.4, cps, 20, 5)
    g = L.Maxwellian(3.0, 3)
    res = [En.marginal_entropy_estimate(e.velocities(t).reshape(-1, 3), g, bootstrap=100, seed=1) for t in cps]
    ups = sum(b["relative_entropy"] > a["ci"][1] for a, b in zip(res, res[1:]))
    assert ups <= 1


def test_report(tmp_path):
    rep = En.EntropyReport()
    rep.add(0.0, 0.2)
    rep.add(1.0, 0.1, 0.05, 0.001)
    assert rep.monotone()
    p = rep.write_csv(tmp_path / "e.csv")
    assert p.read_text().splitlines()[0] == "time,relative_entropy,production,production_stderr,fisher"
