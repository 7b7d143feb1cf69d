import math

import numpy as np
import pytest
from scipy import stats

from kacchaos import chaos, kac
from kacchaos.metrics import WeightedPointMeasure, assignment_cost
from kacchaos.model import CollisionKernel
from kacchaos.rng import stream
from kacchaos.sampling import density, sample_sphere_conditioned, sample_tensorized, sample_uniform_sphere

GMM = CollisionKernel.gmm()
HS = CollisionKernel.hs()
F0 = density("uniform_ball").scaled_to_energy(3.0)


@pytest.fixture(scope="module")
def ens():
    return kac.run_ensemble(lambda r: sample_tensorized(F0, 6, r), GMM, 1.0, [0.0, 0.5, 1.0], 300, 21)


def test_extract_marginal_shapes(ens):
    full = chaos.extract_marginal(ens, 0.5, ell=6)
    assert full.points.shape == (300, 18)
    np.testing.assert_array_equal(full.points[0], ens.records[0].snapshots[1].velocities.ravel())
    aug = chaos.extract_marginal(ens, 0.5, ell=2, augment=True)
    assert aug.points.shape == (600, 6)
    with pytest.raises(ValueError, match="exceeds particle count"):
        chaos.extract_marginal(ens, 0.5, ell=7)
    with pytest.raises(KeyError):
        chaos.extract_marginal(ens, 0.25)


def test_marginal_t0_is_f0(ens):
    x = chaos.extract_marginal(ens, 0.0).points
    r = np.linalg.norm(x, axis=1)
    R = F0.params["R"]
    assert stats.kstest(r, lambda s: np.clip(s / R, 0, 1) ** 3).pvalue > 0.01


def test_first_vs_random_subset(ens):
    V = ens.velocities(1.0)
    rng = stream(1)
    ref = F0.sample(300, stream(2))
    first = assignment_cost(V[:, 0, :], ref, 1)
    rand = assignment_cost(V[np.arange(300), rng.integers(0, 6, 300), :], ref, 1)
    boot = []
    for b in range(30):
        i = rng.integers(0, 300, 300)
        boot.append(assignment_cost(V[i, 0, :], ref, 1))
    assert abs(first - rand) < 3 * math.sqrt(2) * np.std(boot)


def test_chaos_metric_self_reference_zero(ens):
    cloud = chaos.extract_marginal(ens, 0.5, ell=2)
    est = chaos.chaos_metric(ens, cloud, 0.5, ell=2, bootstrap=0)
    assert est.value == 0.0
    assert math.isnan(est.stderr)


def test_chaos_metric_noise_floor_t0(ens):
    est = chaos.chaos_metric(ens, F0, 0.0, bootstrap=30)
    floor = [assignment_cost(F0.sample(300, stream(5, k)), F0.sample(300, stream(6, k)), 1)
             for k in range(30)]
    assert abs(est.value - np.mean(floor)) < 3 * math.hypot(est.stderr, np.std(floor))


def test_chaos_metric_reference_kinds(ens):
    cb = lambda t, n, rng: F0.sample(n, rng)  # noqa: E731
    a = chaos.chaos_metric(ens, cb, 0.0, bootstrap=0)
    b = chaos.chaos_metric(ens, F0, 0.0, bootstrap=0)
    assert a.value == b.value
    with pytest.raises(ValueError):
        chaos.chaos_metric(ens, WeightedPointMeasure.empirical(np.zeros((5, 3))), 0.0)
    with pytest.raises(ValueError):
        chaos.chaos_metric(ens, F0, 0.0, ell=5)


def test_series_reproducible(ens):
    a = chaos.chaos_series(ens, F0, bootstrap=5, seed=4)
    b = chaos.chaos_series(ens, F0, bootstrap=5, seed=4)
    assert a.values == b.values and a.stderr == b.stderr


def test_ell2_not_below_ell1(ens):
    s1 = chaos.chaos_series(ens, F0, ell=1, bootstrap=10, seed=1)
    s2 = chaos.chaos_series(ens, F0, ell=2, bootstrap=10, seed=1)
    for v1, e1, v2, e2 in zip(s1.values, s1.stderr, s2.values, s2.stderr):
        assert v2 >= v1 - 3 * math.hypot(e1, e2)


def test_gmm_endpoints_bracket():
    f0 = density("two_point").scaled_to_energy(3.0)
    e = kac.run_ensemble(lambda r: sample_sphere_conditioned(f0, 20, 3.0, r), GMM, 4.0,
                         [0.0, 0.5, 1.0, 2.0, 4.0], 300, 8)
    s = chaos.relaxation_series(e, bootstrap=10, seed=2, energy=3.0)
    lo = min(s.values[0], s.values[-1]) - 3 * max(s.stderr)
    hi = max(s.values[0], s.values[-1]) + 3 * max(s.stderr)
    assert all(lo <= v <= hi for v in s.values)


def test_relaxation_stationary():
    e = kac.run_ensemble(lambda r: sample_uniform_sphere(16, 1.0, 3, r), HS, 1.0, [0.0, 0.5, 1.0], 300, 9)
    s = chaos.relaxation_series(e, bootstrap=20, seed=3, energy=1.0)
    floor = [assignment_cost(sample_uniform_sphere(300, 1.0, 3, stream(7, k)).velocities,
                             sample_uniform_sphere(300, 1.0, 3, stream(8, k)).velocities, 1)
             for k in range(20)]
    for v, err in zip(s.values, s.stderr):
        assert abs(v - np.mean(floor)) < 3 * math.hypot(err, np.std(floor))


def test_series_roundtrip(ens, tmp_path):
    s = chaos.chaos_series(ens, F0, bootstrap=3, seed=0)
    csv_path, meta = s.write(tmp_path / "c.csv")
    header = csv_path.read_text().splitlines()[0]
    assert tuple(header.split(",")) == chaos.CSV_COLUMNS
    back = chaos.ChaosSeries.read(csv_path)
    assert back.values == s.values and back.N == s.N


def test_series_validation():
    with pytest.raises(ValueError):
        chaos.ChaosSeries([0.0], [-1.0], [0.0], 2, 1, 1, "w1", {}, 0)
    with pytest.raises(ValueError):
        chaos.ChaosSeries([0.0], [1.0], [-0.1], 2, 1, 1, "w1", {}, 0)


def test_lln_hdot_slope():
    res = chaos.lln_rate_experiment(density("trunc_gauss", d=1), "hdot", [25, 50, 100, 200], 400, seed=1)
    assert -1.1 <= res.slope <= -0.9


def test_lln_degenerate():
    res = chaos.lln_rate_experiment(density("two_point", a=0.0, d=1), "w1", [10, 100], 5)
    assert res.degenerate and math.isnan(res.slope)
    assert res.values == [0.0, 0.0]


def test_lln_schedule_checked():
    with pytest.raises(ValueError, match="geometric"):
        chaos.lln_rate_experiment(density("uniform_ball", d=1), "w1", [10, 20, 50], 5)
    with pytest.raises(ValueError):
        chaos.lln_rate_experiment(density("uniform_ball", d=1), "w1", [10], 5)


def test_lln_write(tmp_path):
    res = chaos.lln_rate_experiment(density("uniform_ball", d=1), "w1", [10, 100], 20)
    p = res.write(tmp_path / "l.csv")
    lines = p.read_text().splitlines()
    assert lines[0] == "N,value,stderr,metric" and len(lines) == 3
