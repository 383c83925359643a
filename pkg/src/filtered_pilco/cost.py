"""Saturating distance cost of the pendulum tip and its Gaussian expectation."""

from __future__ import annotations

from dataclasses import dataclass

import jax.numpy as jnp
import numpy as np

# Probabilists' Gauss-Hermite rule, weights normalized to sum to one.
_GH_NODES, _GH_WEIGHTS = np.polynomial.hermite_e.hermegauss(96)
_GH_WEIGHTS = _GH_WEIGHTS / _GH_WEIGHTS.sum()


@dataclass(frozen=True)
class CostSpec:
    """Cost parameters.

    ``cart_index`` and ``angle_index`` locate the cart position and pole angle
    in the state vector.
    """

    sigma_c: float = 0.25
    length: float = 0.2
    gamma: float = 1.0
    horizon: int = 60
    cart_index: int = 0
    angle_index: int = 1

    def __post_init__(self):
        if self.sigma_c <= 0:
            raise ValueError("sigma_c must be positive")
        if self.horizon < 0:
            raise ValueError("horizon must be non-negative")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")


def tip_distance_sq(spec: CostSpec, x):
    """Squared distance of the pole tip from the upright goal ``(0, l)``."""
    xc = x[..., spec.cart_index]
    th = x[..., spec.angle_index]
    l = spec.length
    return (xc - l * jnp.sin(th)) ** 2 + (l - l * jnp.cos(th)) ** 2


def state_cost(spec: CostSpec, x):
    """``1 - exp(-d^2 / (2 sigma_c^2))``, in ``[0, 1)``."""
    x = jnp.asarray(x, dtype=float)
    return 1.0 - jnp.exp(-0.5 * tip_distance_sq(spec, x) / spec.sigma_c**2)


def expected_cost(spec: CostSpec, mu, S):
    """``E[cost(x)]`` for ``x ~ N(mu, S)``.

    Only the cart position and angle matter.  Conditional on the angle the
    cart position is Gaussian and the integral over it is analytic; the
    remaining one-dimensional integral over the angle uses a 96-node
    Gauss-Hermite rule, which is exact to rounding for angle standard
    deviations up to several radians.  The degenerate case ``S = 0``
    reduces to :func:`state_cost`.
    """
    mu = jnp.asarray(mu, dtype=float)
    S = jnp.asarray(S, dtype=float)
    i, j = spec.cart_index, spec.angle_index
    m_x, m_t = mu[i], mu[j]
    s_xx, s_xt, s_tt = S[i, i], S[i, j], S[j, j]

    # 2x2 Cholesky in (angle, cart) order, guarded for zero angle variance
    ok = s_tt > 1e-300
    s_tt_safe = jnp.where(ok, s_tt, 1.0)
    L_tt = jnp.where(ok, jnp.sqrt(s_tt_safe), 0.0)
    L_xt = jnp.where(ok, s_xt / jnp.sqrt(s_tt_safe), 0.0)
    v = jnp.maximum(s_xx - L_xt**2, 0.0)  # cart variance given the angle

    z = jnp.asarray(_GH_NODES)
    theta = m_t + L_tt * z
    a = m_x + L_xt * z  # cart mean given the angle
    l = spec.length
    sc2 = spec.sigma_c**2
    inner = (
        jnp.sqrt(sc2 / (sc2 + v))
        * jnp.exp(-0.5 * (a - l * jnp.sin(theta)) ** 2 / (sc2 + v))
        * jnp.exp(-0.5 * (l - l * jnp.cos(theta)) ** 2 / sc2)
    )
    return 1.0 - jnp.sum(jnp.asarray(_GH_WEIGHTS) * inner)


def total_cost(spec: CostSpec, marginals, gamma=None):
    """Discounted sum ``sum_t gamma^t E[cost(x_t)]`` over ``(mu_t, S_t)`` pairs."""
    g = spec.gamma if gamma is None else gamma
    costs = [expected_cost(spec, m, S) for m, S in marginals]
    return sum((g**t) * c for t, c in enumerate(costs))


def cost_sd_mc(spec: CostSpec, mu, S, n_samples=10_000, seed=0):
    """Standard deviation of the cost under ``N(mu, S)`` by seeded sampling."""
    rng = np.random.default_rng(seed)
    mu = np.asarray(mu, float)
    S = np.asarray(S, float)
    w, U = np.linalg.eigh(0.5 * (S + S.T))
    root = U * np.sqrt(np.maximum(w, 0.0))
    x = mu + rng.standard_normal((n_samples, mu.shape[0])) @ root.T
    return float(np.std(np.asarray(state_cost(spec, x))))
