import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pitcollide.errors import NotPSD
from pitcollide.gmm import StateGmm
from pitcollide.unscented import (ALPHA, BETA, TrajectoryGmm, propagate_component, sigma_points, trajectory_gmm,
                                  transform_point, ut_weights, write_bands_csv, write_density_csv)


def random_spd(rng, n=4, scale=1.0):
    A = rng.normal(size=(n, n)) * scale
    return A @ A.T + 1e-3 * scale ** 2 * np.eye(n)


def affine_oracle(mean, cov, pose, dt):
    X, Y, psi = pose
    A = dt * np.array([[math.cos(psi), -math.sin(psi), 0, 0], [math.sin(psi), math.cos(psi), 0, 0]])
    return np.array([X, Y]) + A @ mean, A @ cov @ A.T


def test_weights_identities():
    Wm, Wc, lam = ut_weights(4)
    assert lam == pytest.approx(ALPHA ** 2 * 4 - 4)
    assert abs(math.fsum(Wm) - 1.0) < 1e-12
    assert Wc[0] - Wm[0] == pytest.approx(1 - ALPHA ** 2 + BETA, abs=1e-6)
    assert Wm[0] < -9e5  # the large negative central weight


def test_zero_covariance_collapses_points():
    sp = sigma_points(np.arange(4.0), np.zeros((4, 4)))
    assert np.all(sp.points == np.arange(4.0))
    mu, P = propagate_component(np.array([10.0, 1.0, 0, 0]), np.zeros((4, 4)), (5.0, -2.0, 0.3), 0.01)
    assert np.all(P == 0)
    ref = transform_point([10.0, 1.0], 5.0, -2.0, 0.3, 0.01)
    assert mu == pytest.approx(ref, abs=1e-15)


def test_identity_covariance_offset_magnitude():
    sp = sigma_points(np.zeros(4), np.eye(4))
    assert np.allclose(np.abs(sp.offsets[1:5]).max(axis=1), ALPHA * 2.0, rtol=1e-12)
    assert np.array_equal(sp.points[0], np.zeros(4))


def test_not_psd():
    with pytest.raises(NotPSD):
        sigma_points(np.zeros(2), np.array([[1.0, 0.0], [0.0, -1.0]]))
    with pytest.raises(NotPSD):
        sigma_points(np.zeros(2), np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_rank_deficient_cov_handled_by_jitter():
    v = np.array([1.0, 2.0, 0.0, 0.0])
    sp = sigma_points(np.zeros(4), np.outer(v, v))
    assert np.all(np.isfinite(sp.points))


def test_transform_point_examples():
    assert transform_point([10.0, 0.0], 1.0, 2.0, 0.0, 0.01) == pytest.approx((1.1, 2.0))
    x, y = transform_point([10.0, 0.0], 1.0, 2.0, math.pi / 2, 0.01)
    assert x == pytest.approx(1.0, abs=1e-15) and y == pytest.approx(2.1)
    rng = np.random.default_rng(0)
    for _ in range(20):
        v, psi = rng.normal(size=2) * 10, rng.uniform(-4, 4)
        R = np.array([[math.cos(psi), -math.sin(psi)], [math.sin(psi), math.cos(psi)]])
        ref = np.array([3.0, -4.0]) + R @ v * 0.01
        assert np.allclose(transform_point(v, 3.0, -4.0, psi, 0.01), ref, atol=1e-12, rtol=0)


@settings(max_examples=200)
@given(st.integers(0, 2 ** 32 - 1), st.floats(-200, 200), st.floats(-200, 200), st.floats(-6, 6),
       st.floats(1e-3, 0.1), st.floats(0.01, 10))
def test_affine_exactness(seed, X, Y, psi, dt, scale):
    rng = np.random.default_rng(seed)
    mean = np.array([rng.uniform(-5, 35), rng.uniform(-5, 5), rng.normal(), rng.normal()])
    cov = random_spd(rng, scale=scale)
    mu, P = propagate_component(mean, cov, (X, Y, psi), dt)
    mu_ref, P_ref = affine_oracle(mean, cov, (X, Y, psi), dt)
    assert np.allclose(mu, mu_ref, rtol=1e-9, atol=1e-9 * np.abs(mu_ref).max())
    assert np.abs(P - P_ref).max() <= 1e-9 * np.abs(P_ref).max()
    assert np.linalg.eigvalsh(P).min() >= -1e-12


def test_covariance_homogeneity():
    rng = np.random.default_rng(4)
    mean, cov = np.array([15.0, 0.5, 0.1, 0.0]), random_spd(rng, scale=0.5)
    _, P1 = propagate_component(mean, cov, (0, 0, 0.4), 0.01)
    _, P4 = propagate_component(mean, 4 * cov, (0, 0, 0.4), 0.01)
    assert np.allclose(P4, 4 * P1, rtol=1e-9, atol=0)


def _gmm(J=2):
    rng = np.random.default_rng(1)
    w = rng.dirichlet(np.ones(J))
    return StateGmm(w, rng.normal(size=(J, 4)) * 3 + [15, 0, 0, 0], rng.uniform(0.1, 2, size=(J, 4)))


def test_single_component_reduces_to_ut():
    g = _gmm(1)
    tg = trajectory_gmm(g, (1.0, 2.0, 0.2), 0.01)
    mu, P = propagate_component(g.means[0], g.covariances()[0], (1.0, 2.0, 0.2), 0.01)
    assert np.array_equal(tg.means[0], mu) and np.array_equal(tg.covs[0], P)


def test_density_normalization_and_swap():
    g = _gmm(3)
    # dt = 1 keeps the grid resolvable
    tg = trajectory_gmm(g, (0.0, 0.0, 0.3), 1.0)
    xs, ys, d = tg.grid(400, 6.0)
    mass = np.trapezoid(np.trapezoid(d, ys, axis=1), xs)
    assert mass == pytest.approx(1.0, abs=1e-3)
    flipped = TrajectoryGmm(tg.weights[::-1], tg.means[::-1], tg.covs[::-1])
    pts = np.random.default_rng(0).normal(size=(50, 2)) * 3 + tg.mean()
    assert np.allclose(flipped.density(pts[:, 0], pts[:, 1]), tg.density(pts[:, 0], pts[:, 1]), rtol=1e-13)


def test_grid_default_shape_and_csv(tmp_path):
    tg = trajectory_gmm(_gmm(2), (0.0, 0.0, 0.0), 0.01)
    xs, ys, d = tg.grid()
    assert d.shape == (200, 200)
    write_density_csv(tmp_path / "d.csv", xs[:3], ys[:2], d[:3, :2])
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "x,y,density" and len(lines) == 7
    write_bands_csv(tmp_path / "b.csv", [0.01], [tg])
    assert (tmp_path / "b.csv").read_text().splitlines()[0] == "t,mu_x,mu_y,sxx,sxy,syy"


def test_state_gmm_validation_and_sampling():
    with pytest.raises(ValueError):
        StateGmm([0.5, 0.6], np.zeros((2, 4)), np.ones((2, 4)))
    g = _gmm(2)
    x = g.sample(100000, np.random.default_rng(0))
    se = np.sqrt(np.diag(g.covariance()) / len(x))
    assert np.all(np.abs(x.mean(axis=0) - g.mean()) < 4 * se)
