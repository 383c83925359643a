import numpy as np
import pytest

from conftest import random_model, random_spd
from filtered_pilco.cartpole import CartpoleParams
from filtered_pilco.filtering import Belief, filter_predict, filter_update
from filtered_pilco.gp import empty_model, predict_point
from filtered_pilco.moments import GaussianVec, predict_uncertain
from filtered_pilco.policy import init_policy, policy_eval


def _information_form(m, V, z, N):
    P = np.linalg.inv(V) + np.linalg.inv(N)
    Vp = np.linalg.inv(P)
    return Vp @ (np.linalg.solve(V, m) + np.linalg.solve(N, z)), Vp


def test_certain_prior_ignores_observation(rng):
    m, z = rng.normal(size=4), rng.normal(size=4)
    post = filter_update(Belief(m, np.zeros((4, 4))), z, random_spd(rng, 4, floor=0.1))
    np.testing.assert_allclose(post.m, m, atol=1e-15)
    np.testing.assert_allclose(post.V, 0.0, atol=1e-15)


def test_symmetric_fusion(rng):
    m, z = rng.normal(size=3), rng.normal(size=3)
    V = 0.3 * np.eye(3)
    post = filter_update(Belief(m, V), z, V)
    np.testing.assert_allclose(post.m, (m + z) / 2, atol=1e-14)
    np.testing.assert_allclose(post.V, 0.15 * np.eye(3), atol=1e-14)


def test_matches_information_form_fusion():
    rng = np.random.default_rng(0)
    worst_m = worst_V = 0.0
    for _ in range(1000):
        m, z = rng.normal(size=4), rng.normal(size=4)
        V, N = random_spd(rng, 4, 0.5, floor=0.05), random_spd(rng, 4, 0.3, floor=0.02)
        post = filter_update(Belief(m, V), z, N)
        om, oV = _information_form(m, V, z, N)
        worst_m = max(worst_m, np.max(np.abs(np.asarray(post.m) - om)))
        worst_V = max(worst_V, np.max(np.abs(np.asarray(post.V) - oV)))
        gap = np.linalg.eigvalsh(V - np.asarray(post.V))
        assert gap.min() >= -1e-10
        assert np.array_equal(post.V, np.asarray(post.V).T)
    assert worst_m < 1e-10 and worst_V < 1e-10


def test_noise_free_limit_returns_observation(rng):
    m, z = rng.normal(size=4), rng.normal(size=4)
    post = filter_update(Belief(m, random_spd(rng, 4, floor=0.1)), z, 1e-12 * np.eye(4))
    np.testing.assert_allclose(post.m, z, atol=1e-9)


def test_singular_update_raises():
    with pytest.raises(np.linalg.LinAlgError):
        filter_update(Belief(np.zeros(2), np.zeros((2, 2))), np.ones(2), np.zeros((2, 2)))


def test_predict_from_point_belief_is_gp_posterior(rng):
    model = random_model(rng, n=20, D=3, E=4)
    m, u = rng.normal(size=3), rng.normal(size=1)
    nxt = filter_predict(Belief(m, np.zeros((3, 3))), u, model)
    mean, var = predict_point(model, np.r_[m, u])
    np.testing.assert_allclose(nxt.m, mean, atol=1e-10)
    np.testing.assert_allclose(nxt.V, np.diag(var), atol=1e-10)


def test_predict_through_prior_only_model(rng):
    sf2 = np.array([0.2, 0.3, 0.4])
    model = empty_model(3, 4, signal_var=sf2, mean_weights=np.hstack([np.eye(3), np.zeros((3, 1))]))
    m, V = rng.normal(size=3), random_spd(rng, 3, 0.5)
    nxt = filter_predict(Belief(m, V), [2.0], model)
    np.testing.assert_allclose(nxt.m, m, atol=1e-14)
    np.testing.assert_allclose(nxt.V, np.diag(sf2) + V, atol=1e-14)
    nxt0 = filter_predict(Belief(m, np.zeros((3, 3))), [2.0], model)
    np.testing.assert_allclose(nxt0.V, np.diag(sf2), atol=1e-14)


def test_predict_equals_direct_stacked_call(rng):
    model = random_model(rng, n=20, D=3, E=4)
    m, V, u = rng.normal(size=3), random_spd(rng, 3, 0.4), np.array([0.7])
    nxt = filter_predict(Belief(m, V), u, model)
    S = np.zeros((4, 4))
    S[:3, :3] = V
    ref = predict_uncertain(model, GaussianVec(np.r_[m, u], S))
    # same code path; jit fusion may reorder floating-point sums
    np.testing.assert_allclose(nxt.m, ref.mean, rtol=0, atol=1e-12)
    np.testing.assert_allclose(nxt.V, ref.cov, rtol=0, atol=1e-12)


def test_update_predict_cycle_stays_psd(cartpole_model):
    sim = CartpoleParams()
    policy = init_policy(sim.init_mean, sim.init_cov, n_centroids=10, seed=3)
    rng = np.random.default_rng(4)
    b = Belief(np.asarray(sim.init_mean), sim.init_cov)
    x = np.asarray(sim.init_mean, float)
    from filtered_pilco.cartpole import observe, step

    for t in range(60):
        if t:
            b = filter_update(b, observe(sim, x, rng), sim.noise_cov)
        u = np.asarray(policy_eval(policy, b.m))
        b = filter_predict(b, u, cartpole_model)
        x = step(sim, x, u)
        assert np.linalg.eigvalsh(np.asarray(b.V)).min() >= -1e-10
