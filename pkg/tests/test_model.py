import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from kacchaos.metrics import WeightedPointMeasure, fourier_norm
from kacchaos.model import (CollisionKernel, ParticleState, SphereConstraint, collide_pair,
                            kernel_rate, multi_indices, sample_sigma)
from kacchaos.rng import stream

EPS = np.finfo(float).eps
finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)
vec3 = st.lists(finite, min_size=3, max_size=3).map(np.array)


def unit(v):
    n = np.linalg.norm(v)
    return v / n if n > 1e-3 else np.array([0.0, 0.0, 1.0])


def test_collide_pair_examples():
    a, b = collide_pair([1, 0, 0], [-1, 0, 0], [0, 1, 0])
    np.testing.assert_allclose(a, [0, 1, 0], atol=1e-15)
    np.testing.assert_allclose(b, [0, -1, 0], atol=1e-15)
    a, b = collide_pair([1, 0, 0], [-1, 0, 0], [1, 0, 0])
    np.testing.assert_allclose(a, [1, 0, 0])
    np.testing.assert_allclose(b, [-1, 0, 0])
    a, b = collide_pair([2, 0, 0], [0, 0, 0], [0, 0, 1])
    np.testing.assert_allclose(a, [1, 0, 1])
    np.testing.assert_allclose(b, [1, 0, -1])
    assert a @ a + b @ b == pytest.approx(4)


def test_collide_pair_errors():
    with pytest.raises(ValueError):
        collide_pair([1, 0, 0], [0, 0], [1, 0, 0])
    with pytest.raises(ValueError):
        collide_pair([1, 0, 0], [0, 0, 0], [1, 1, 0])


@given(vec3, vec3, vec3)
def test_collide_pair_conserves(v, w, s):
    a, b = collide_pair(v, w, unit(s))
    scale = max(1.0, v @ v + w @ w)
    assert np.all(np.abs(a + b - v - w) <= 16 * EPS * max(1.0, np.abs(v).max() + np.abs(w).max()))
    assert abs(a @ a + b @ b - v @ v - w @ w) <= 16 * EPS * scale
    assert abs(np.linalg.norm(a - b) - np.linalg.norm(v - w)) <= 16 * EPS * max(1.0, np.linalg.norm(v - w))


@given(vec3, vec3, vec3)
def test_collide_twice_keeps_invariants(v, w, s):
    a, b = collide_pair(v, w, unit(s))
    rel = a - b
    if np.linalg.norm(rel) < 1e-6:
        return
    c, e = collide_pair(a, b, rel / np.linalg.norm(rel))
    np.testing.assert_allclose(c + e, v + w, atol=1e-12 * max(1, np.abs(v).max() + np.abs(w).max()))
    np.testing.assert_allclose(np.linalg.norm(c - e), np.linalg.norm(v - w), rtol=1e-12, atol=1e-12)


def test_sigma_gmm_uniform_half_sphere():
    k = CollisionKernel.gmm()
    u = np.array([0.0, 0.6, 0.8])
    rng = stream(1)
    S = np.array([sample_sigma(k, u, rng) for _ in range(100_000)])
    assert np.all(S @ u >= -1e-15)
    perp = S - np.outer(S @ u, u)
    assert np.linalg.norm(perp.mean(axis=0)) < 4 / math.sqrt(1e5)
    # half-sphere uniform: cos theta is uniform on [0, 1] in d=3
    assert stats.kstest(S @ u, "uniform").pvalue > 1e-3


def test_sigma_tmm_truncation_and_cdf():
    k = CollisionKernel.tmm(0.3)
    u = np.array([1.0, 0.0, 0.0])
    rng = stream(2)
    S = np.array([sample_sigma(k, u, rng) for _ in range(100_000)])
    theta = np.arccos(np.clip(S @ u, -1, 1))
    assert theta.min() >= 0.3 - 1e-12 and theta.max() <= math.pi / 2 + 1e-12
    # reference CDF by adaptive quadrature of b sin theta
    grid = np.linspace(0.3, math.pi / 2, 200)
    ref = k.theta_cdf(grid)
    emp = np.searchsorted(np.sort(theta), grid, side="right") / theta.size
    assert np.max(np.abs(emp - ref)) < 1.63 / math.sqrt(1e5)


def test_kernel_rate_examples():
    assert kernel_rate(CollisionKernel.gmm(), [3, 1, 2], [0, 0, 5]) == pytest.approx(2 * math.pi)
    assert kernel_rate(CollisionKernel.hs(), [1, 0, 0], [-1, 0, 0]) == pytest.approx(4 * math.pi)
    assert kernel_rate(CollisionKernel.hs(), [1, 2, 0], [1, 2, 0]) == 0.0


def test_kernel_validation():
    with pytest.raises(ValueError):
        CollisionKernel.tmm(0.0)
    with pytest.raises(ValueError):
        CollisionKernel.tmm(-0.1)
    with pytest.raises(ValueError):
        CollisionKernel("xx")
    with pytest.raises(ValueError):
        CollisionKernel.gmm(d=1)


def test_tmm_angular_mass_closed_form():
    eps = 0.3
    k = CollisionKernel.tmm(eps)
    # int_eps^{pi/2} theta^{-5/2} sin theta dtheta, checked with a fine trapezoid
    t = np.linspace(eps, math.pi / 2, 200_001)
    val = np.trapezoid(t ** -2.5 * np.sin(t), t)
    assert k.angular_mass == pytest.approx(2 * math.pi * val, rel=1e-8)


def test_particle_state_caches():
    rng = stream(3)
    v = rng.normal(size=(500, 3)) * 1e3
    s = ParticleState(v)
    assert s.energy == pytest.approx((v ** 2).sum() / 500, rel=8 * EPS * 500)
    np.testing.assert_allclose(s.momentum, v.mean(axis=0), rtol=0, atol=8 * EPS * 500 * 1e3)
    with pytest.raises(ValueError):
        ParticleState(np.array([[np.nan, 0, 0]]))


def test_sphere_constraint():
    with pytest.raises(ValueError):
        SphereConstraint(0.0)
    s = ParticleState(np.array([[1.0, 0, 0], [-1.0, 0, 0]]))
    assert s.on_sphere(SphereConstraint(1.0))
    assert not s.on_sphere(SphereConstraint(1.1))


def test_multi_indices():
    idx = multi_indices(3, 2)
    assert len(idx) == 10
    assert all(sum(a) <= 2 for a in idx)


def _increment_norm(theta):
    v = np.array([1.0, 0.0, 0.0])
    w = -v
    s = np.array([math.cos(theta), math.sin(theta), 0.0])
    a, b = collide_pair(v, w, s)
    h = WeightedPointMeasure(np.array([v, w, a, b]), np.array([1.0, 1.0, -1.0, -1.0]))
    return fourier_norm(h, 2.0)


@pytest.mark.parametrize("theta", [0.8, 0.4, 0.2])
def test_collision_increment_fourier_norm_quadratic(theta):
    assert _increment_norm(theta / 2) <= 0.6 * _increment_norm(theta)
