"""RBF feedback policy with sine saturation.

The pre-saturation output of action ``j`` is a weighted sum of Gaussian bumps

    a_j(m) = sum_i w_ij exp(-(m - c_i)^T Lambda_j^-1 (m - c_i) / 2)

which is the posterior mean of a noise-free GP, so its moments under a
Gaussian input come from the same q/Q machinery as the dynamics.  The
saturation ``u = u_max (9 sin a + sin 3a) / 8`` is bounded by ``u_max`` and has
closed-form Gaussian moments.
"""

from __future__ import annotations

from typing import NamedTuple

import jax
import jax.numpy as jnp
import numpy as np

from filtered_pilco._linalg import symmetrize
from filtered_pilco.moments import Q_mat, _log_q

# u = u_max * sum_k SQUASH_COEF[k] * sin(SQUASH_FREQ[k] * a)
SQUASH_COEF = (9.0 / 8.0, 1.0 / 8.0)
SQUASH_FREQ = (1.0, 3.0)


class PolicyParams(NamedTuple):
    centroids: jnp.ndarray  # (n_c, D)
    weights: jnp.ndarray  # (n_c, F)
    lengthscales: jnp.ndarray  # (F, D)
    u_max: float

    @property
    def n_centroids(self):
        return self.centroids.shape[0]

    @property
    def n_action(self):
        return self.weights.shape[1]

    def to_vector(self):
        """Flatten the free parameters (lengthscales in log space)."""
        return jnp.concatenate(
            [
                jnp.ravel(self.centroids),
                jnp.ravel(self.weights),
                jnp.ravel(jnp.log(self.lengthscales)),
            ]
        )

    def from_vector(self, vec):
        """Inverse of :meth:`to_vector`, keeping shapes and ``u_max`` of ``self``."""
        nc, D = self.centroids.shape
        F = self.weights.shape[1]
        i, j = nc * D, nc * D + nc * F
        return PolicyParams(
            vec[:i].reshape(nc, D),
            vec[i:j].reshape(nc, F),
            jnp.exp(vec[j : j + F * D].reshape(F, D)),
            self.u_max,
        )


def init_policy(mean0, cov0, n_centroids=100, n_action=1, u_max=10.0, seed=0) -> PolicyParams:
    """Random initialization around the initial state distribution.

    Centroids ~ N(mean0, cov0), weights ~ N(0, (u_max/10)^2), unit lengthscales.
    """
    rng = np.random.default_rng(seed)
    mean0 = np.asarray(mean0, float)
    D = mean0.shape[0]
    L = np.linalg.cholesky(np.asarray(cov0, float) + 1e-12 * np.eye(D))
    centroids = mean0 + rng.standard_normal((n_centroids, D)) @ L.T
    weights = (u_max / 10.0) * rng.standard_normal((n_centroids, n_action))
    return PolicyParams(centroids, weights, np.ones((n_action, D)), float(u_max))


def squash(a, u_max):
    return u_max * sum(c * jnp.sin(w * a) for c, w in zip(SQUASH_COEF, SQUASH_FREQ))


def rbf_output(params: PolicyParams, m):
    """Pre-saturation output ``a(m)`` for every action dimension."""
    diff = m[None, :] - params.centroids  # (n_c, D)

    def one(ls, w):
        return w @ jnp.exp(-0.5 * jnp.sum((diff / ls) ** 2, axis=1))

    return jax.vmap(one)(params.lengthscales, params.weights.T)


def policy_eval(params: PolicyParams, m):
    """Deterministic action ``u = u_max * sat(a(m))``; always within ``[-u_max, u_max]``."""
    return squash(rbf_output(params, jnp.asarray(m, float)), params.u_max)


def rbf_moments(params: PolicyParams, mu, S):
    """Exact mean, covariance and premultiplied input-output covariance of ``a(x)``."""
    X = jnp.asarray(params.centroids)
    lam = jnp.asarray(params.lengthscales) ** 2
    W = jnp.asarray(params.weights).T  # (F, n_c)
    F = W.shape[0]

    def first(lam_j, w):
        lq, sol, _ = _log_q(X, mu, lam_j, S)
        q = jnp.exp(lq)
        return w @ q, sol.T @ (w * q)

    mean, C = jax.vmap(first)(lam, W)

    ia, ib = jnp.triu_indices(F)
    zero = jnp.zeros_like(S)

    def pair(i, j):
        Q = Q_mat(X, mu, lam[i], lam[j], zero, S)
        return W[i] @ Q @ W[j] - mean[i] * mean[j]

    vals = jax.vmap(pair)(ia, ib)
    cov = jnp.zeros((F, F)).at[ia, ib].set(vals).at[ib, ia].set(vals)
    return mean, symmetrize(cov), C.T


def squash_moments(m, s, u_max):
    """Moments of ``u_max * sat(a)`` for ``a ~ N(m, s)``.

    Returns the mean, covariance and the expected derivative ``E[du_j/da_j]``
    (which maps input-output covariances through the saturation, by Stein's
    lemma).
    """
    F = m.shape[0]
    d = jnp.diag(s)
    mean = jnp.zeros(F)
    dmean = jnp.zeros(F)
    second = jnp.zeros((F, F))
    for ck, wk in zip(SQUASH_COEF, SQUASH_FREQ):
        mean = mean + ck * jnp.exp(-0.5 * wk**2 * d) * jnp.sin(wk * m)
        dmean = dmean + ck * wk * jnp.exp(-0.5 * wk**2 * d) * jnp.cos(wk * m)
        for cl, wl in zip(SQUASH_COEF, SQUASH_FREQ):
            # E[sin(wk a_i) sin(wl a_j)] = (E cos(wk a_i - wl a_j) - E cos(wk a_i + wl a_j)) / 2
            v_minus = wk**2 * d[:, None] + wl**2 * d[None, :] - 2 * wk * wl * s
            v_plus = wk**2 * d[:, None] + wl**2 * d[None, :] + 2 * wk * wl * s
            m_minus = wk * m[:, None] - wl * m[None, :]
            m_plus = wk * m[:, None] + wl * m[None, :]
            second = second + 0.5 * ck * cl * (
                jnp.exp(-0.5 * v_minus) * jnp.cos(m_minus) - jnp.exp(-0.5 * v_plus) * jnp.cos(m_plus)
            )
    cov = symmetrize(second - jnp.outer(mean, mean))
    return u_max * mean, u_max**2 * cov, u_max * dmean


def policy_moments(params: PolicyParams, mu, S):
    """Moment-matched action distribution for a Gaussian policy input ``N(mu, S)``.

    Returns ``(mean_u, cov_u, C)`` where ``C = S^-1 Cov[x, u]`` has shape
    ``(D, F)``.
    """
    ma, sa, Ca = rbf_moments(params, jnp.asarray(mu, float), jnp.asarray(S, float))
    mu_u, s_u, dmean = squash_moments(ma, sa, params.u_max)
    return mu_u, s_u, Ca * dmean[None, :]


# -- serialization ---------------------------------------------------------


def save_policy(params: PolicyParams, path):
    """Key-value text format; see :func:`filtered_pilco.gp.save_model`."""
    with open(path, "w") as fh:
        fh.write("# filtered-pilco RBF policy v1\n")
        fh.write(f"u_max = {'%.17g' % float(params.u_max)}\n")
        for name in ("centroids", "weights", "lengthscales"):
            arr = np.asarray(getattr(params, name), float)
            fh.write(f"{name}.shape = {' '.join(str(s) for s in arr.shape)}\n")
            fh.write(f"{name} = {' '.join('%.17g' % v for v in arr.ravel())}\n")


def load_policy(path) -> PolicyParams:
    from filtered_pilco.gp import read_kv_arrays

    arrays, scalars = read_kv_arrays(path)
    return PolicyParams(
        arrays["centroids"], arrays["weights"], arrays["lengthscales"], float(scalars["u_max"])
    )
