"""Multi-step analytic trajectory prediction.

Three prediction modes share one interface:

``filtered_full``
    Hierarchical beliefs ``B ~ N(M, V)`` with ``M ~ N(mu_m, Sigma_m)`` and a
    fixed ``V``.  Each step fuses a predicted observation, evaluates the
    policy on the random belief-mean and predicts the next belief through the
    GP with hierarchically uncertain input.  The latent marginal is the
    flattened belief ``N(mu_m, Sigma_m + V)``.
``unfiltered_full``
    The classic chain ``X_t -> X_{t+1}`` where the policy sees ``X_t`` plus
    observation noise.
``filtered_map``
    One deterministic trajectory: the latent system follows the GP mean,
    observations equal the latent state and the belief runs the execution
    filter.  Expected cost equals the point cost.

The pure ``*_core`` functions are traceable and used for gradients.
"""

from __future__ import annotations

import csv
import logging
from functools import partial
from typing import NamedTuple

import jax
import jax.numpy as jnp
import numpy as np

from filtered_pilco._linalg import symmetrize
from filtered_pilco.cost import CostSpec, cost_sd_mc, expected_cost, state_cost
from filtered_pilco.filtering import Belief, _filter_update, augment, update_weights
from filtered_pilco.gp import _predict_point
from filtered_pilco.moments import _predict_hierarchical, _predict_uncertain
from filtered_pilco.policy import PolicyParams, policy_eval, policy_moments

logger = logging.getLogger(__name__)

FILTERED_FULL = "filtered_full"
UNFILTERED_FULL = "unfiltered_full"
FILTERED_MAP = "filtered_map"
MODES = (FILTERED_FULL, UNFILTERED_FULL, FILTERED_MAP)

DIVERGENCE_NORM = 1e6


class RolloutDivergence(RuntimeError):
    pass


class HierBelief(NamedTuple):
    """Gaussian over the belief-mean plus a fixed belief covariance."""

    mu_m: jnp.ndarray
    sigma_m: jnp.ndarray
    v_bar: jnp.ndarray


class RolloutResult(NamedTuple):
    """Per-timestep predictions for ``t = 0..T``.

    ``mu_m``, ``sigma_m`` and ``v_bar`` are the prior (pre-update) beliefs in
    filtered modes and ``None`` otherwise.  ``repairs`` counts covariance
    matrices that needed eigenvalue clipping.
    """

    mode: str
    mu_x: np.ndarray
    sigma_x: np.ndarray
    cost: np.ndarray
    mu_m: np.ndarray | None
    sigma_m: np.ndarray | None
    v_bar: np.ndarray | None
    repairs: int

    def cost_sd(self, spec: CostSpec, n_samples=10_000, seed=0):
        """Per-timestep cost standard deviation by seeded sampling of the marginals."""
        if self.mode == FILTERED_MAP:
            return np.zeros(len(self.cost))
        return np.array(
            [
                cost_sd_mc(spec, m, S, n_samples, seed + t)
                for t, (m, S) in enumerate(zip(self.mu_x, self.sigma_x))
            ]
        )

    def to_csv(self, path, spec: CostSpec, n_samples=10_000, seed=0):
        """Write ``t, mu_cost, sd_cost, mode`` rows."""
        sd = self.cost_sd(spec, n_samples, seed)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "mu_cost", "sd_cost", "mode"])
            for t, (c, s) in enumerate(zip(self.cost, sd)):
                w.writerow([t, repr(float(c)), repr(float(s)), self.mode])


# -- single steps ----------------------------------------------------------


def hier_update(hb: HierBelief, sigma_z, noise) -> HierBelief:
    """Fuse a random observation with covariance ``sigma_z`` into the belief.

    The belief-mean keeps its mean and the belief covariance becomes
    ``W_m V`` as in the execution-time update.  The observation is drawn
    around the latent state, which is drawn around the belief-mean, so
    ``Cov[M, Z] = Sigma_m`` and the new belief-mean covariance is
    ``W_m Sigma_m W_m^T + W_z Sigma_z W_z^T + W_m Sigma_m W_z^T + W_z Sigma_m W_m^T``.
    Dropping the last two terms shrinks ``Sigma_m`` at every update and makes
    long filtered predictions overconfident.
    """
    W_m, W_z = update_weights(hb.v_bar, noise)
    cross = W_m @ hb.sigma_m @ W_z.T
    sigma_m = W_m @ hb.sigma_m @ W_m.T + W_z @ sigma_z @ W_z.T + cross + cross.T
    return HierBelief(hb.mu_m, symmetrize(sigma_m), symmetrize(W_m @ hb.v_bar))


def _joint_with_action(policy, mu, S):
    """Joint Gaussian of ``[M; U]`` with ``U = pi(M)``, ``M ~ N(mu, S)``."""
    mu_u, S_u, C = policy_moments(policy, mu, S)
    cross = S @ C
    cov = jnp.block([[S, cross], [cross.T, S_u]])
    return jnp.concatenate([mu, mu_u]), symmetrize(cov)


def _predict_step(hb: HierBelief, policy, model, noise, update=True):
    if update:
        sigma_z = hb.sigma_m + hb.v_bar + noise
        hb = hier_update(hb, sigma_z, noise)
    mean, cov = _joint_with_action(policy, hb.mu_m, hb.sigma_m)
    D = hb.mu_m.shape[0]
    F = mean.shape[0] - D
    Vt = jnp.zeros((D + F, D + F)).at[:D, :D].set(hb.v_bar)
    hm, bad = _predict_hierarchical(model, mean, cov, Vt)
    return HierBelief(hm.mean_of_mean, hm.cov_of_mean, hm.mean_of_var), bad


def predict_step(hb: HierBelief, policy: PolicyParams, model, noise, update=True) -> HierBelief:
    """One filtered prediction step: update, policy, hierarchical GP prediction."""
    hb = HierBelief(*(jnp.asarray(a, float) for a in hb))
    return _predict_step(hb, policy, model, jnp.asarray(noise, float), update)[0]


# -- cores -----------------------------------------------------------------


def _scan_steps(step, carry0, n):
    if n <= 0:
        return carry0, None
    return jax.lax.scan(jax.checkpoint(step), carry0, None, length=n)


def _stack0(first, rest):
    if rest is None:
        return jax.tree_util.tree_map(lambda a: a[None], first)
    return jax.tree_util.tree_map(lambda a, b: jnp.concatenate([a[None], b]), first, rest)


def filtered_full_core(policy, model, mu0, V0, noise, T):
    """Prior beliefs for ``t = 0..T`` and the number of PSD repairs."""
    D = mu0.shape[0]
    hb0 = HierBelief(mu0, jnp.zeros((D, D)), V0)
    if T == 0:
        return _stack0(hb0, None), jnp.array(0)
    hb1, bad0 = _predict_step(hb0, policy, model, noise, update=False)

    def step(carry, _):
        hb, n_bad = carry
        nxt, bad = _predict_step(hb, policy, model, noise)
        return (nxt, n_bad + bad), nxt

    (_, n_bad), rest = _scan_steps(step, (hb1, bad0.astype(int)), T - 1)
    return _stack0(hb0, _stack0(hb1, rest)), n_bad


def unfiltered_full_core(policy, model, mu0, V0, noise, T):
    def step(carry, _):
        (mu, S), n_bad = carry
        mean, cov = _joint_with_action_noisy(policy, mu, S, noise)
        out, bad = _predict_uncertain(model, mean, cov)
        nxt = (out.mean, out.cov)
        return (nxt, n_bad + bad), nxt

    (_, n_bad), rest = _scan_steps(step, ((mu0, V0), jnp.array(0)), T)
    return _stack0((mu0, V0), rest), n_bad


def _joint_with_action_noisy(policy, mu, S, noise):
    # the policy sees z = x + eps; Cov[x, u] = Cov[x, z] Cov[z]^-1 Cov[z, u] = S C
    mu_u, S_u, C = policy_moments(policy, mu, S + noise)
    cross = S @ C
    cov = jnp.block([[S, cross], [cross.T, S_u]])
    return jnp.concatenate([mu, mu_u]), symmetrize(cov)


def filtered_map_core(policy, model, mu0, V0, noise, T):
    """Latent states ``x_0..x_T`` and prior beliefs along the MAP trajectory."""

    def advance(x, post):
        u = policy_eval(policy, post.m)
        x_next, _ = _predict_point(model, jnp.concatenate([x, u]))
        mu, S = augment(post.m, post.V, u)
        out, bad = _predict_uncertain(model, mu, S)
        return x_next, Belief(out.mean, out.cov), bad

    if T == 0:
        return mu0[None], _stack0(Belief(mu0, V0), None), jnp.array(0)
    x1, prior1, bad0 = advance(mu0, Belief(mu0, V0))

    def step(carry, _):
        x, prior, n_bad = carry
        post = _filter_update(prior, x, noise)
        x_next, prior_next, bad = advance(x, post)
        return (x_next, prior_next, n_bad + bad), (x_next, prior_next)

    (_, _, n_bad), rest = _scan_steps(step, (x1, prior1, bad0.astype(int)), T - 1)
    xs = _stack0(mu0, _stack0(x1, None if rest is None else rest[0]))
    beliefs = _stack0(Belief(mu0, V0), _stack0(prior1, None if rest is None else rest[1]))
    return xs, beliefs, n_bad


def marginals_core(mode, policy, model, mu0, V0, noise, T):
    """Latent marginals ``(mu_x, sigma_x)`` for ``t = 0..T`` plus extras."""
    if mode == FILTERED_FULL:
        hbs, n_bad = filtered_full_core(policy, model, mu0, V0, noise, T)
        return hbs.mu_m, hbs.sigma_m + hbs.v_bar, hbs, n_bad
    if mode == UNFILTERED_FULL:
        (mus, Ss), n_bad = unfiltered_full_core(policy, model, mu0, V0, noise, T)
        return mus, Ss, None, n_bad
    if mode == FILTERED_MAP:
        xs, beliefs, n_bad = filtered_map_core(policy, model, mu0, V0, noise, T)
        return xs, jnp.zeros(xs.shape + xs.shape[-1:]), beliefs, n_bad
    raise ValueError(f"unknown rollout mode {mode!r}")


def stage_costs(mode, spec, mu_x, sigma_x):
    if mode == FILTERED_MAP:
        return state_cost(spec, mu_x)
    return jax.vmap(lambda m, S: expected_cost(spec, m, S))(mu_x, sigma_x)


def discounted(costs, gamma):
    return jnp.sum(gamma ** jnp.arange(costs.shape[0]) * costs)


# -- public entry point ----------------------------------------------------


def rollout(mode, init, policy: PolicyParams, model, spec: CostSpec, noise) -> RolloutResult:
    """Predict ``spec.horizon`` steps from ``init = (mean, cov)`` in the given mode.

    Raises :class:`RolloutDivergence` if any moment becomes non-finite or its
    norm exceeds 1e6.
    """
    if mode not in MODES:
        raise ValueError(f"unknown rollout mode {mode!r}; expected one of {MODES}")
    mu0 = jnp.asarray(init[0], float)
    V0 = jnp.asarray(init[1], float)
    noise = jnp.asarray(noise, float)
    mu_x, sigma_x, extra, n_bad = _marginals_jit(mode, spec.horizon, policy, model, mu0, V0, noise)
    costs = np.asarray(stage_costs(mode, spec, mu_x, sigma_x))
    mu_x, sigma_x = np.asarray(mu_x), np.asarray(sigma_x)
    big = max(np.max(np.abs(mu_x)), np.max(np.abs(sigma_x)))
    if not (np.isfinite(big) and big < DIVERGENCE_NORM and np.all(np.isfinite(costs))):
        raise RolloutDivergence(f"{mode} rollout diverged (max moment magnitude {big:.3g})")
    if int(n_bad):
        logger.warning("%s rollout: %d covariance(s) clipped to PSD", mode, int(n_bad))
    mu_m = sigma_m = v_bar = None
    if mode == FILTERED_FULL:
        mu_m, sigma_m, v_bar = (np.asarray(a) for a in extra)
        # flattened-belief identity: the latent marginal is N(mu_m, Sigma_m + V)
        assert np.array_equal(mu_x, mu_m)
        assert np.array_equal(sigma_x, np.asarray(extra.sigma_m + extra.v_bar))
    elif mode == FILTERED_MAP:
        mu_m, v_bar = np.asarray(extra.m), np.asarray(extra.V)
        sigma_m = np.zeros_like(v_bar)
    return RolloutResult(mode, mu_x, sigma_x, costs, mu_m, sigma_m, v_bar, int(n_bad))


@partial(jax.jit, static_argnums=(0, 1))
def _marginals_jit(mode, T, policy, model, mu0, V0, noise):
    return marginals_core(mode, policy, model, mu0, V0, noise, T)
