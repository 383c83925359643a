import jax
import jax.numpy as jnp
import numpy as np
import pytest

from conftest import random_spd, rel_err
from filtered_pilco.policy import (
    PolicyParams,
    init_policy,
    load_policy,
    policy_eval,
    policy_moments,
    rbf_moments,
    save_policy,
    squash,
    squash_moments,
)


def _random_policy(rng, D=3, F=2, nc=8, w=0.7, u_max=10.0):
    return PolicyParams(
        rng.normal(size=(nc, D)), w * rng.normal(size=(nc, F)), rng.uniform(0.7, 1.5, (F, D)), u_max
    )


def _rbf_np(p, xs):
    d = xs[:, None, :] - p.centroids[None]
    return np.stack(
        [np.exp(-0.5 * np.sum((d / p.lengthscales[j]) ** 2, -1)) @ p.weights[:, j] for j in range(p.weights.shape[1])],
        axis=1,
    )


def _squash_np(a, u_max):
    return u_max * (9 * np.sin(a) + np.sin(3 * a)) / 8


def test_zero_weights_give_zero_action(rng):
    p = init_policy(np.zeros(4), np.eye(4), n_centroids=5, seed=0)._replace(weights=np.zeros((5, 1)))
    assert np.all(np.asarray(policy_eval(p, rng.normal(size=4))) == 0.0)
    m, s, C = policy_moments(p, rng.normal(size=4), random_spd(rng, 4))
    assert np.all(np.asarray(m) == 0) and np.all(np.asarray(s) == 0) and np.all(np.asarray(C) == 0)


def test_action_is_bounded(rng):
    for _ in range(200):
        p = _random_policy(rng, w=rng.uniform(0, 30))
        u = np.asarray(policy_eval(p, 3 * rng.normal(size=3)))
        assert np.all(np.abs(u) <= 10.0 + 1e-12)


def test_saturation_monotone_up_to_bound():
    # the sine saturation rises monotonically to u_max on [0, pi/2] and is odd
    a = np.linspace(0, np.pi / 2, 2001)
    u = np.asarray(squash(jnp.asarray(a), 10.0))
    assert np.all(np.diff(u) > 0)
    assert u[-1] == pytest.approx(10.0, abs=1e-12)
    np.testing.assert_allclose(np.asarray(squash(-jnp.asarray(a), 10.0)), -u, atol=1e-14)


def test_point_input_matches_eval_and_gradient(rng):
    p = _random_policy(rng)
    mu = rng.normal(size=3)
    m, s, C = policy_moments(p, mu, np.zeros((3, 3)))
    np.testing.assert_allclose(m, policy_eval(p, mu), atol=1e-12)
    np.testing.assert_allclose(s, 0.0, atol=1e-12)
    h = 1e-6
    fd = np.stack(
        [(np.asarray(policy_eval(p, mu + h * e)) - np.asarray(policy_eval(p, mu - h * e))) / (2 * h) for e in np.eye(3)]
    )
    np.testing.assert_allclose(C, fd, atol=1e-6)


@pytest.mark.parametrize("seed", range(3))
def test_rbf_moments_match_monte_carlo(seed):
    rng = np.random.default_rng(seed)
    p = _random_policy(rng)
    mu, S = 0.5 * rng.normal(size=3), random_spd(rng, 3, 0.5)
    m, s, C = rbf_moments(p, jnp.asarray(mu), jnp.asarray(S))
    xs = rng.multivariate_normal(mu, S, size=1_000_000)
    a = _rbf_np(p, xs)
    assert rel_err(m, a.mean(0)) < 2e-2
    assert rel_err(s, np.cov(a.T)) < 2e-2
    cross = (xs - mu).T @ (a - a.mean(0)) / len(xs)
    assert rel_err(S @ np.asarray(C), cross) < 2e-2


@pytest.mark.parametrize("seed", range(3))
def test_squash_moments_exact_for_gaussian_input(seed):
    rng = np.random.default_rng(seed)
    m, s = rng.normal(size=2), random_spd(rng, 2, 0.8)
    mean, cov, dmean = squash_moments(jnp.asarray(m), jnp.asarray(s), 10.0)
    a = rng.multivariate_normal(m, s, size=1_000_000)
    u = _squash_np(a, 10.0)
    assert rel_err(mean, u.mean(0)) < 2e-2
    assert rel_err(cov, np.cov(u.T)) < 2e-2
    d = 10.0 * (9 * np.cos(a) + 3 * np.cos(3 * a)) / 8
    assert rel_err(dmean, d.mean(0)) < 2e-2


def test_composition_matches_monte_carlo_over_random_instances():
    # Moment matching the RBF output before the saturation is exact only when a(x)
    # is Gaussian; errors are judged in units of u_max over 100 instances.
    rng = np.random.default_rng(0)
    errs = []
    for _ in range(100):
        p = _random_policy(rng)
        mu, S = 0.5 * rng.normal(size=3), random_spd(rng, 3, 0.15)
        m, s, C = policy_moments(p, mu, S)
        xs = rng.multivariate_normal(mu, S, size=100_000)
        u = _squash_np(_rbf_np(p, xs), 10.0)
        cross = (xs - mu).T @ (u - u.mean(0)) / len(xs)
        scale = np.sqrt(S.diagonal().max())
        errs.append(
            [
                np.abs(np.asarray(m) - u.mean(0)).max() / 10,
                np.abs(np.asarray(s) - np.cov(u.T)).max() / 100,
                np.abs(S @ np.asarray(C) - cross).max() / (10 * scale),
            ]
        )
        assert np.all(np.abs(np.asarray(m)) <= 10 + 1e-12)
        assert np.all(np.diag(np.asarray(s)) <= 100 + 1e-9)
    errs = np.array(errs)
    assert np.all(np.median(errs, axis=0) < 1e-2)
    assert np.all(np.percentile(errs, 95, axis=0) < 5e-2)
    assert np.all(errs.max(axis=0) < 0.1)


def test_moments_are_differentiable(rng):
    p = _random_policy(rng)
    mu, S = rng.normal(size=3), random_spd(rng, 3, 0.3)
    g = jax.grad(lambda v: jnp.sum(policy_moments(p.from_vector(v), mu, S)[1]))(p.to_vector())
    assert np.all(np.isfinite(np.asarray(g)))


def test_vector_round_trip(rng):
    p = _random_policy(rng)
    back = p.from_vector(p.to_vector())
    for name in ("centroids", "weights", "lengthscales"):
        np.testing.assert_allclose(getattr(back, name), getattr(p, name), rtol=1e-15)
    assert back.u_max == p.u_max


def test_text_round_trip(tmp_path, rng):
    p = init_policy([0, np.pi, 0, 0], 0.04 * np.eye(4), n_centroids=7, seed=5)
    save_policy(p, tmp_path / "p.txt")
    back = load_policy(tmp_path / "p.txt")
    for name in ("centroids", "weights", "lengthscales"):
        assert np.array_equal(np.asarray(getattr(back, name)), np.asarray(getattr(p, name)))
    assert back.u_max == p.u_max


def test_init_is_seeded_and_shaped():
    a = init_policy([0, np.pi, 0, 0], 0.04 * np.eye(4), n_centroids=100, seed=1)
    b = init_policy([0, np.pi, 0, 0], 0.04 * np.eye(4), n_centroids=100, seed=1)
    assert a.centroids.shape == (100, 4) and a.weights.shape == (100, 1)
    assert np.array_equal(a.centroids, b.centroids) and np.array_equal(a.weights, b.weights)
    assert np.all(a.lengthscales == 1.0)
    assert abs(a.centroids[:, 1].mean() - np.pi) < 0.1
