import numpy as np
import pytest

from filtered_pilco.cartpole import (
    FILTERED,
    UNFILTERED,
    CartpoleParams,
    energy,
    execute_episode,
    observe,
    ode,
    step,
)
from filtered_pilco.policy import init_policy

SIM = CartpoleParams()


def test_hanging_rest_under_unit_force():
    d = ode(SIM, np.array([0.0, np.pi, 0.0, 0.0]), 1.0)
    assert d[2] == pytest.approx(1.6, abs=1e-12)
    assert d[3] == pytest.approx(-12.0, abs=1e-12)
    assert d[0] == 0.0 and d[1] == 0.0


@pytest.mark.parametrize("theta", [0.0, np.pi])
def test_equilibria_are_fixed_points(theta):
    x = np.array([0.3, theta, 0.0, 0.0])
    np.testing.assert_allclose(ode(SIM, x, 0.0), 0.0, atol=1e-12)
    np.testing.assert_allclose(step(SIM, x, 0.0), x, atol=1e-12)


def test_denominators_bounded_away_from_zero():
    th = np.linspace(-10, 10, 10001)
    den = 4 * (SIM.m_cart + SIM.m_pole) - 3 * SIM.m_pole * np.cos(th) ** 2
    assert den.min() >= 2.5 - 1e-12


def test_halving_substeps_from_hanging_rest():
    x = np.array([0.0, np.pi, 0.0, 0.0])
    assert np.max(np.abs(step(SIM, x, 1.0, substeps=10) - step(SIM, x, 1.0, substeps=20))) < 1e-8


def test_fourth_order_convergence():
    rng = np.random.default_rng(0)
    ratios = []
    for _ in range(20):
        x = rng.normal(size=4) * [0.5, 2.0, 2.0, 8.0]
        u = rng.uniform(-10, 10)
        ref = step(SIM, x, u, substeps=320)
        e1 = np.max(np.abs(step(SIM, x, u, substeps=10) - ref))
        e2 = np.max(np.abs(step(SIM, x, u, substeps=20) - ref))
        ratios.append(e1 / e2)
    assert 12 < np.median(ratios) < 20


def test_energy_conserved_without_friction():
    sim = SIM.with_(friction=0.0)
    x = np.array([0.0, np.pi / 2, 0.0, 0.0])
    e0 = energy(sim, x)
    for _ in range(60):
        x = step(sim, x, 0.0)
    assert abs(energy(sim, x) - e0) < 1e-6


def test_control_is_clamped():
    x = np.array([0.0, np.pi, 0.0, 0.0])
    np.testing.assert_array_equal(step(SIM, x, 50.0), step(SIM, x, 10.0))


def test_observation_noise():
    x = np.array([0.1, 3.0, -0.2, 0.4])
    rng = np.random.default_rng(0)
    zs = np.array([observe(SIM, x, rng) for _ in range(100_000)])
    np.testing.assert_allclose(np.var(zs - x, axis=0), np.square(SIM.obs_sd), rtol=0.05)
    np.testing.assert_array_equal(observe(SIM, x, 7), observe(SIM, x, 7))
    quiet = SIM.with_(obs_sd=(0.0, 0.0, 0.0, 0.0))
    np.testing.assert_array_equal(observe(quiet, x, 1), x)
    assert SIM.obs_sd[2] == pytest.approx(0.9)


def test_unfiltered_episode_record():
    pol = init_policy(SIM.init_mean, SIM.init_cov, n_centroids=10, seed=0)
    rec = execute_episode(SIM, pol, mode=UNFILTERED, seed=3)
    assert rec.x.shape == (61, 4) and rec.u.shape == (60, 1) and rec.cost.shape == (61,)
    assert rec.aborted is None
    np.testing.assert_array_equal(rec.belief_m, rec.z)
    assert np.all(np.abs(rec.u) <= 10)
    ds = rec.to_dataset()
    assert ds.inputs.shape == (60, 5) and ds.targets.shape == (60, 4)
    np.testing.assert_array_equal(ds.targets, rec.z[1:])
    again = execute_episode(SIM, pol, mode=UNFILTERED, seed=3)
    np.testing.assert_array_equal(rec.cost, again.cost)


def test_filtered_needs_model():
    pol = init_policy(SIM.init_mean, SIM.init_cov, n_centroids=3)
    with pytest.raises(ValueError):
        execute_episode(SIM, pol, mode=FILTERED)
    with pytest.raises(ValueError):
        execute_episode(SIM, pol, mode="kalman")


def test_null_controller_keeps_pendulum_hanging(cartpole_model):
    pol = init_policy(SIM.init_mean, SIM.init_cov, n_centroids=3)._replace(weights=np.zeros((3, 1)))
    quiet = SIM.with_(obs_sd=(0.0, 0.0, 0.0, 0.0))
    for seed in range(3):
        rec = execute_episode(quiet, pol, cartpole_model, FILTERED, seed=seed, filter_noise=1e-12 * np.eye(4))
        assert np.all(rec.u == 0)
        assert np.all(np.abs(rec.cost - 0.722) < 0.15)


def test_filter_is_vacuous_without_noise(cartpole_model):
    pol = init_policy(SIM.init_mean, SIM.init_cov, n_centroids=10, seed=2)
    quiet = SIM.with_(obs_sd=(0.0, 0.0, 0.0, 0.0), init_sd=(1e-9,) * 4)
    a = execute_episode(quiet, pol, cartpole_model, FILTERED, seed=5, filter_noise=np.zeros((4, 4)))
    b = execute_episode(quiet, pol, mode=UNFILTERED, seed=5)
    assert a.aborted is None
    np.testing.assert_allclose(a.u, b.u, atol=1e-6)


def test_filtered_episodes_are_deterministic(cartpole_model):
    pol = init_policy(SIM.init_mean, SIM.init_cov, n_centroids=10, seed=2)
    for seed in range(3):
        a = execute_episode(SIM, pol, cartpole_model, FILTERED, seed=seed)
        b = execute_episode(SIM, pol, cartpole_model, FILTERED, seed=seed)
        np.testing.assert_array_equal(a.cost, b.cost)
        np.testing.assert_array_equal(a.belief_V, b.belief_V)
