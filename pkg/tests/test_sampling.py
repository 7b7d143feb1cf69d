import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from kacchaos.metrics import WeightedPointMeasure, wasserstein_empirical
from kacchaos.model import SphereConstraint, multi_indices
from kacchaos.rng import stream
from kacchaos.sampling import (NAMES, chaos_baseline, density, project_to_sphere,
                               sample_sphere_conditioned, sample_tensorized, sample_uniform_sphere)

LIB = [density("uniform_ball", R=1.5), density("trunc_gauss", sigma=0.8, R=2.0),
       density("trunc_gauss", sigma=1.2), density("two_point", a=0.7),
       density("bimodal", m=1.0, s=0.4), density("two_temperature", p=0.3, s1=0.5, s2=1.5)]


def test_unknown_density():
    with pytest.raises(ValueError):
        density("cauchy")
    with pytest.raises(ValueError):
        density("two_point", b=1.0)


@pytest.mark.parametrize("f0", LIB, ids=lambda f: f.name)
def test_closed_form_moments(f0):
    x = f0.sample(400_000, stream(1))
    for a in multi_indices(3, 4):
        m = np.prod(x ** np.array(a), axis=1)
        se = m.std() / math.sqrt(len(m))
        assert abs(m.mean() - f0.moment(a)) < 5 * se + 1e-12
    e = (x ** 2).sum(axis=1)
    assert abs(e.mean() - f0.energy) < 5 * e.std() / math.sqrt(len(e)) + 1e-12


@pytest.mark.parametrize("f0", [f for f in LIB if f.charfn() is not None], ids=lambda f: f.name)
def test_charfn_matches_samples(f0):
    x = f0.sample(200_000, stream(2))
    xi = stream(3).normal(size=(5, 3))
    emp = np.exp(-1j * x @ xi.T).mean(axis=0)
    assert np.max(np.abs(emp - f0.charfn()(xi))) < 0.02


@pytest.mark.parametrize("f0", LIB, ids=lambda f: f.name)
def test_scaled_to_energy(f0):
    assert f0.scaled_to_energy(2.5).energy == pytest.approx(2.5, rel=1e-12)


def test_tensorized_examples():
    s = sample_tensorized(density("two_point", a=1.0, d=1), 4, stream(0))
    assert set(np.abs(s.velocities.ravel())) == {1.0}
    x = density("trunc_gauss").sample(100_000, stream(1))
    assert np.all(np.abs(x.mean(axis=0)) < 3 / math.sqrt(1e5))


def test_energy_concentration_rate():
    f0 = density("uniform_ball")
    var = []
    for N in (10, 100, 1000):
        e = [sample_tensorized(f0, N, stream(7, r)).energy for r in range(2000)]
        var.append(np.var(e))
    for a, b in zip(var, var[1:]):
        assert 7 < a / b < 13


@given(st.integers(2, 40), st.floats(0.1, 10), st.integers(0, 2 ** 32))
def test_sphere_samplers_on_sphere(N, E, seed):
    c = SphereConstraint(E)
    s = sample_sphere_conditioned(density("bimodal"), N, E, stream(seed))
    assert abs(s.energy - E) <= 1e-12 * E and np.max(np.abs(s.momentum)) <= 1e-12 * math.sqrt(E)
    u = sample_uniform_sphere(N, E, 3, stream(seed))
    assert u.on_sphere(c, 1e-12)


def test_sphere_conditioned_two_point_n2():
    rng = stream(5)
    for _ in range(50):
        v = sample_sphere_conditioned(density("two_point", d=1), 2, 4.0, rng).velocities.ravel()
        assert sorted(v.tolist()) == pytest.approx([-2.0, 2.0])
    assert project_to_sphere(np.array([[1.0], [1.0]]), 1.0) is None


def test_sphere_conditioned_rejection_limit():
    with pytest.raises(RuntimeError):
        sample_sphere_conditioned(_Degenerate(), 3, 1.0, stream(0))


class _Degenerate:
    name = "degenerate"
    energy = 1.0

    def sample(self, n, rng):
        return np.ones((n, 3))


def test_sphere_conditioned_is_chaotic():
    f0 = density("uniform_ball").scaled_to_energy(1.0)
    pooled = np.concatenate([sample_sphere_conditioned(f0, 100, 1.0, stream(9, r)).velocities
                             for r in range(100)])
    ref = f0.sample(10_000, stream(10))
    w = wasserstein_empirical(WeightedPointMeasure.empirical(pooled[:, :1]),
                              WeightedPointMeasure.empirical(ref[:, :1]), 1)
    boots = []
    rng = stream(11)
    for _ in range(50):
        a = f0.sample(10_000, rng)[:, :1]
        b = f0.sample(10_000, rng)[:, :1]
        boots.append(wasserstein_empirical(WeightedPointMeasure.empirical(a),
                                           WeightedPointMeasure.empirical(b), 1))
    assert w < 3 * np.mean(boots)


def test_uniform_sphere_two_points():
    rng = stream(6)
    plus = sum(sample_uniform_sphere(2, 1.0, 1, rng).velocities[0, 0] > 0 for _ in range(10_000))
    assert abs(plus - 5000) < 3 * 50
    v = sample_uniform_sphere(2, 1.0, 1, rng).velocities.ravel()
    assert sorted(v.tolist()) == pytest.approx([-1.0, 1.0])


def test_uniform_sphere_marginal_gaussian():
    v = sample_uniform_sphere(10_000, 3.0, 3, stream(8)).velocities
    speeds = np.linalg.norm(v, axis=1)
    assert stats.kstest(speeds, stats.chi(3).cdf).pvalue > 0.01


def test_uniform_sphere_permutation_invariance():
    rng = stream(12)
    a = np.array([sample_uniform_sphere(5, 1.0, 3, rng).velocities[0, 0] for _ in range(3000)])
    b = np.array([sample_uniform_sphere(5, 1.0, 3, rng).velocities[3, 0] for _ in range(3000)])
    assert stats.ks_2samp(a, b).pvalue > 0.01


def test_chaos_baseline_degenerate():
    e = chaos_baseline(density("two_point", a=0.0, d=1), 50, 20)
    assert e.value == 0.0


def test_chaos_baseline_hdot_identity():
    e = chaos_baseline(density("trunc_gauss", d=1), 100, 2000, "hdot", 1)
    assert abs(e.value - 2 * math.sqrt(math.pi) / 100) < 3 * e.stderr


def test_chaos_baseline_hdot_halves():
    a = chaos_baseline(density("trunc_gauss", d=1), 50, 1000, "hdot", 2)
    b = chaos_baseline(density("trunc_gauss", d=1), 100, 1000, "hdot", 3)
    assert abs(a.value / 2 - b.value) < 3 * math.hypot(a.stderr / 2, b.stderr)


def test_chaos_baseline_rejects_metric():
    with pytest.raises(ValueError):
        chaos_baseline(density("trunc_gauss", d=1), 10, 2, "kl")


def test_library_names():
    assert set(NAMES) >= {"uniform_ball", "trunc_gauss", "two_point", "bimodal"}
