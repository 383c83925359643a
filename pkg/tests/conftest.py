import numpy as np
import pytest
from scipy.stats import qmc

import filtered_pilco  # noqa: F401  (enables float64 in jax)
from filtered_pilco.gp import GPDataset, GPHyper, build_model


def random_model(rng, n=20, D=2, E=3, phi_scale=0.5, ls_range=(0.6, 1.6)):
    """Small GP with random data and hyperparameters (not trained)."""
    X = rng.normal(size=(n, E))
    Y = np.sin(1.5 * X[:, :D]) + 0.3 * X[:, -1:] + 0.05 * rng.normal(size=(n, D))
    hyper = GPHyper(
        rng.uniform(*ls_range, size=(D, E)),
        rng.uniform(0.5, 2.0, size=D),
        rng.uniform(0.01, 0.1, size=D),
        phi_scale * rng.normal(size=(D, E)),
    )
    return build_model(GPDataset(X, Y), hyper)


def random_spd(rng, d, scale=1.0, floor=0.0):
    A = rng.normal(size=(d, d)) * scale
    return A @ A.T + floor * np.eye(d)


def gp_posterior_oracle(model, Xs):
    """Textbook GP posterior mean and variance, written out with explicit distances."""
    return gp_oracle_fn(model)(np.atleast_2d(Xs))


def gp_oracle_fn(model):
    """Batched form of :func:`gp_posterior_oracle` with the training solves done once."""
    import jax
    import jax.numpy as jnp

    X = np.asarray(model.inputs)
    D = model.signal_var.shape[0]
    parts = []
    for a in range(D):
        ls = np.asarray(model.lengthscales[a])
        sf2 = float(model.signal_var[a])
        d2 = (((X[:, None, :] - X[None, :, :]) / ls) ** 2).sum(-1)
        K = sf2 * np.exp(-0.5 * d2) + float(model.noise_var[a]) * np.eye(len(X))
        phi = np.asarray(model.mean_weights[a])
        alpha = np.linalg.solve(K, np.asarray(model.targets)[:, a] - X @ phi)
        parts.append((ls, sf2, phi, alpha, np.linalg.inv(K)))

    @jax.jit
    def one_chunk(Xs):
        means, varis = [], []
        for ls, sf2, phi, alpha, Kinv in parts:
            ks = sf2 * jnp.exp(-0.5 * (((Xs[:, None, :] - X[None, :, :]) / ls) ** 2).sum(-1))
            means.append(Xs @ phi + ks @ alpha)
            varis.append(sf2 - jnp.sum((ks @ Kinv) * ks, axis=1))
        return jnp.stack(means, 1), jnp.stack(varis, 1)

    def f(Xs, chunk=65_536):
        out = [one_chunk(jnp.asarray(Xs[i : i + chunk])) for i in range(0, len(Xs), chunk)]
        return (np.vstack([np.asarray(m) for m, _ in out]), np.vstack([np.asarray(v) for _, v in out]))

    return f


def gaussian_qmc(mu, S, m, seed):
    """``2**m`` scrambled-Sobol points mapped to ``N(mu, S)``."""
    from scipy.stats import norm

    d = len(mu)
    u = qmc.Sobol(d, scramble=True, seed=seed).random_base2(m)
    z = norm.ppf(np.clip(u, 1e-12, 1 - 1e-12))
    w, U = np.linalg.eigh(S)
    return mu + z @ (U * np.sqrt(np.maximum(w, 0.0))).T


def shifted_qmc_sets(V, n_sets, m, seed):
    """``n_sets`` independently shifted copies of a ``2**m``-point Sobol set mapped to ``N(0, V)``.

    Each copy is a Cranley-Patterson rotation, so integration errors are
    independent across copies instead of shared.
    """
    from scipy.stats import norm

    E = len(V)
    rng = np.random.default_rng(seed)
    base = qmc.Sobol(E, scramble=True, seed=seed).random_base2(m)
    u = (base[None] + rng.random((n_sets, 1, E))) % 1.0
    z = norm.ppf(np.clip(u, 1e-12, 1 - 1e-12))
    w, U = np.linalg.eigh(V)
    return z @ (U * np.sqrt(np.maximum(w, 0.0))).T


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def cartpole_model():
    """GP trained on three random-force cartpole episodes (180 points)."""
    from filtered_pilco.cartpole import CartpoleParams, observe, step
    from filtered_pilco.gp import train

    sim = CartpoleParams()
    rng = np.random.default_rng(2)
    X, Y = [], []
    for _ in range(3):
        x = np.asarray(sim.init_mean) + 0.2 * rng.standard_normal(4)
        for _ in range(60):
            u = rng.uniform(-10, 10)
            xn = step(sim, x, u)
            X.append(np.r_[x, u])
            Y.append(observe(sim, xn, rng))
            x = xn
    return train(GPDataset(np.array(X), np.array(Y)), fixed_noise=np.square(sim.obs_sd))


def small_gradient_problem(mode, seed=0, horizon=3):
    """Two-state model, three-centroid policy: analytic and central-difference dJ/dtheta."""
    from filtered_pilco.cost import CostSpec
    from filtered_pilco.learner import ANALYTIC, FINITE_DIFFERENCE, policy_gradient
    from filtered_pilco.policy import PolicyParams

    rng = np.random.default_rng(seed)
    model = random_model(rng, n=15, D=2, E=3, phi_scale=0.3)
    policy = PolicyParams(
        rng.normal(size=(3, 2)), 0.5 * rng.normal(size=(3, 1)), rng.uniform(0.7, 1.5, (1, 2)), 3.0
    )
    init = (np.array([0.1, 0.4]), 0.04 * np.eye(2))
    spec = CostSpec(horizon=horizon, sigma_c=0.5)
    noise = 0.01 * np.eye(2)
    args = (policy, model, spec, mode, init, noise)
    return policy_gradient(*args, grad_mode=ANALYTIC), policy_gradient(*args, grad_mode=FINITE_DIFFERENCE)


def elementwise_rel(a, b, floor=1e-6):
    """Largest elementwise relative error; entries below ``floor * max|b|`` compare absolutely."""
    a, b = np.asarray(a), np.asarray(b)
    scale = np.maximum(np.abs(b), floor * np.max(np.abs(b)))
    return float(np.max(np.abs(a - b) / scale))
