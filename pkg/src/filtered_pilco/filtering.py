"""Execution-time Bayesian filter: update on an observation, predict through the GP."""

from __future__ import annotations

from typing import NamedTuple

import jax
import jax.numpy as jnp
import numpy as np
from jax.scipy.linalg import cho_factor, cho_solve

from filtered_pilco._linalg import symmetrize
from filtered_pilco.moments import _predict_uncertain


class Belief(NamedTuple):
    """Gaussian belief ``N(m, V)`` over the latent state."""

    m: jnp.ndarray
    V: jnp.ndarray


def update_weights(V, noise):
    """``W_m = noise (V + noise)^-1`` and ``W_z = V (V + noise)^-1``.

    Solved through a Cholesky factor of ``V + noise``; both weights are
    returned as right-multiplications of the factor's inverse.
    """
    c = cho_factor(symmetrize(V + noise), lower=True)
    # X (V+N)^-1 = solve((V+N), X^T)^T since V+N is symmetric
    W_m = cho_solve(c, noise.T).T
    W_z = cho_solve(c, V.T).T
    return W_m, W_z


def filter_update(prior: Belief, z, noise) -> Belief:
    """Fuse the prior belief with observation ``z ~ N(x, noise)``.

    ``m' = W_m m + W_z z`` and ``V' = W_m V``.  Raises ``LinAlgError`` if
    ``V + noise`` is singular.
    """
    V = jnp.asarray(prior.V, dtype=float)
    N = jnp.asarray(noise, dtype=float)
    post = _filter_update(Belief(jnp.asarray(prior.m, float), V), jnp.asarray(z, float), N)
    if not bool(jnp.all(jnp.isfinite(post.V))):
        raise np.linalg.LinAlgError("filter_update: V + noise is singular")
    return post


def _filter_update(prior, z, noise):
    W_m, W_z = update_weights(prior.V, noise)
    return Belief(W_m @ prior.m + W_z @ z, symmetrize(W_m @ prior.V))


def augment(m, V, u):
    """Stack belief and a deterministic action: ``[m; u]``, ``blkdiag(V, 0)``."""
    D, F = m.shape[0], u.shape[0]
    Vt = jnp.zeros((D + F, D + F)).at[:D, :D].set(V)
    return jnp.concatenate([m, u]), Vt


def filter_predict(post: Belief, u, model) -> Belief:
    """Push the posterior belief and a known action through the GP dynamics."""
    return _filter_predict(post, jnp.atleast_1d(jnp.asarray(u, float)), model)


@jax.jit
def _filter_predict(post, u, model):
    mu, S = augment(post.m, post.V, u)
    out, _ = _predict_uncertain(model, mu, S)
    return Belief(out.mean, out.cov)
