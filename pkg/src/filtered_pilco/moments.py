"""Exact moments of GP outputs under Gaussian and hierarchically Gaussian inputs.

Notation: ``lam`` is the diagonal of a squared-lengthscale matrix Lambda,
``V`` an inner (belief) covariance and ``Sigma`` an outer covariance over the
input mean.  Everything here is written in ``jax.numpy`` and is traceable, so
rollouts built on these functions can be differentiated end to end.
"""

from __future__ import annotations

from typing import NamedTuple

import jax
import jax.numpy as jnp
from jax.scipy.linalg import cho_factor, cho_solve

from filtered_pilco._linalg import psd_repair, symmetrize


class GaussianVec(NamedTuple):
    mean: jnp.ndarray
    cov: jnp.ndarray


class MomentOut(NamedTuple):
    """Output moments of a GP with uncertain input.

    ``in_out`` is the input-output covariance premultiplied by the inverse
    input covariance, for the GP residual ``f - phi^T x`` only (shape
    ``(E, D)``).  The full premultiplied covariance is ``in_out + phi.T``.
    """

    mean: jnp.ndarray
    cov: jnp.ndarray
    in_out: jnp.ndarray


class HierMoments(NamedTuple):
    mean_of_mean: jnp.ndarray
    cov_of_mean: jnp.ndarray
    mean_of_var: jnp.ndarray
    in_out: jnp.ndarray


def _log_q(X, mu, lam, V):
    """log q_i and the solves ``(Lambda + V)^{-1} (x_i - mu)`` (rows)."""
    A = jnp.diag(lam) + V
    c = cho_factor(A, lower=True)
    nu = X - mu
    sol = cho_solve(c, nu.T).T
    logdet = 2.0 * jnp.sum(jnp.log(jnp.diag(c[0]))) - jnp.sum(jnp.log(lam))
    return -0.5 * logdet - 0.5 * jnp.sum(nu * sol, axis=1), sol, c


def q_vec(X, mu, lam, V):
    """``q_i = |Lambda^-1 V + I|^-1/2 exp(-(x_i-mu)^T (Lambda+V)^-1 (x_i-mu) / 2)``.

    Equivalently ``E_{x ~ N(mu, V)}[exp(-(x_i-x)^T Lambda^-1 (x_i-x) / 2)]``.
    """
    return jnp.exp(_log_q(X, mu, lam, V)[0])


def _log_Q_factors(X, mu, lam_a, lam_b, V, Sigma):
    """Factors ``(A, B)`` with ``log Q = A @ B.T`` (rank ``E + 2``)."""
    E = X.shape[1]
    lqa, za, ca = _log_q(X, mu, lam_a, V)
    lqb, zb, cb = _log_q(X, mu, lam_b, V)
    eye = jnp.eye(E)
    P = cho_solve(ca, eye) + cho_solve(cb, eye)
    R = Sigma @ P + eye
    M = symmetrize(jnp.linalg.solve(R, Sigma))  # R^{-1} Sigma
    _, logdetR = jnp.linalg.slogdet(R)
    zaM = za @ M
    ta = lqa + 0.5 * jnp.sum(zaM * za, axis=1) - 0.5 * logdetR
    tb = lqb + 0.5 * jnp.sum((zb @ M) * zb, axis=1)
    one = jnp.ones_like(ta)[:, None]
    A = jnp.concatenate([zaM, ta[:, None], one], axis=1)
    B = jnp.concatenate([zb, one, tb[:, None]], axis=1)
    return A, B


def _log_Q(X, mu, lam_a, lam_b, V, Sigma):
    A, B = _log_Q_factors(X, mu, lam_a, lam_b, V, Sigma)
    return A @ B.T


def _Q_contract(X, mu, lam_a, lam_b, V, Sigma, w_a, w_b, c, K):
    """``sum_ij Q_ij (w_a[i] w_b[j] + c K_ij)`` in a single pass over ``Q``."""
    A, B = _log_Q_factors(X, mu, lam_a, lam_b, V, Sigma)
    return jnp.sum(jnp.exp(A @ B.T) * (w_a[:, None] * w_b[None, :] + c * K))


def Q_mat(X, mu, lam_a, lam_b, V, Sigma):
    """Expected product ``E_{m ~ N(mu, Sigma)}[q(x_i, m, Lambda_a, V) q(x_j, m, Lambda_b, V)]``.

    Computed in closed form via ``R = Sigma((Lambda_a+V)^-1 + (Lambda_b+V)^-1) + I``
    and ``z_ij = (Lambda_a+V)^-1 (x_i-mu) + (Lambda_b+V)^-1 (x_j-mu)``.
    """
    return jnp.exp(_log_Q(X, mu, lam_a, lam_b, V, Sigma))


def _pairs(D):
    ia, ib = jnp.triu_indices(D)
    return ia, ib


def _fill_sym(vals, ia, ib, D):
    M = jnp.zeros((D, D)).at[ia, ib].set(vals)
    return M.at[ib, ia].set(vals)


def _linear_cross(C, phi, S):
    """``C_a^T S phi_b + phi_a^T S C_b + phi_a^T S phi_b`` for all pairs."""
    CS = C.T @ S  # (D, E)
    PS = phi @ S
    return CS @ phi.T + (CS @ phi.T).T + PS @ phi.T


def predict_uncertain(model, inp: GaussianVec, repair: bool = True) -> MomentOut:
    """Moments of ``f(x)`` for ``x ~ N(inp.mean, inp.cov)``.

    Mean ``s_a^2 beta_a^T q^a + phi_a^T mu``; covariance by the law of total
    variance (variance of the posterior mean plus expected posterior
    variance) including the linear-mean cross terms.
    """
    out, _ = _predict_uncertain(model, inp.mean, inp.cov, repair)
    return out


def _predict_uncertain(model, mu, S, repair=True):
    model = jax.tree_util.tree_map(jnp.asarray, model)
    X = model.inputs
    D = model.signal_var.shape[0]
    lam = model.lengthscales**2
    sf2 = model.signal_var
    beta = model.beta
    phi = model.mean_weights

    def first(lam_a, sf2_a, beta_a):
        lq, sol, _ = _log_q(X, mu, lam_a, S)
        q = jnp.exp(lq)
        return q, sf2_a * sol.T @ (beta_a * q)

    q, C = jax.vmap(first)(lam, sf2, beta)  # (D, n), (D, E)
    C = C.T
    mean = sf2 * jnp.sum(beta * q, axis=1) + phi @ mu

    ia, ib = _pairs(D)

    def pair(a, b):
        s2 = sf2[a] * sf2[b]
        diag = jnp.where(a == b, 1.0, 0.0)
        # s2 beta_a^T Q beta_b - [a == b] s_a^4 tr(K_a^-1 Q)
        wQ = _Q_contract(
            X, mu, lam[a], lam[b], jnp.zeros_like(S), S,
            s2 * beta[a], beta[b], -diag * sf2[a] ** 2, model.inv_kn[a],
        )
        return wQ - s2 * (beta[a] @ q[a]) * (beta[b] @ q[b]) + diag * sf2[a]

    cov = _fill_sym(jax.vmap(pair)(ia, ib), ia, ib, D) + _linear_cross(C, phi, S)
    if repair:
        cov, bad = psd_repair(cov)
    else:
        cov, bad = symmetrize(cov), jnp.array(False)
    return MomentOut(mean, cov, C), bad


def predict_hierarchical(model, outer: GaussianVec, inner_var, repair: bool = True) -> HierMoments:
    """GP prediction when the input is ``N(M, V)`` with ``M ~ N(outer.mean, outer.cov)``.

    ``inner_var`` is the fixed belief covariance (zero on action rows).

    Returns the mean and covariance of the predicted belief-mean, the
    expected predicted belief covariance and the premultiplied input-output
    covariance of the belief-mean.
    """
    out, _ = _predict_hierarchical(model, outer.mean, outer.cov, inner_var, repair)
    return out


def _predict_hierarchical(model, mu, S, V, repair=True):
    model = jax.tree_util.tree_map(jnp.asarray, model)
    X = model.inputs
    D = model.signal_var.shape[0]
    lam = model.lengthscales**2
    sf2 = model.signal_var
    beta = model.beta
    phi = model.mean_weights
    SV = S + V

    def first(lam_a, sf2_a, beta_a):
        lq, sol, _ = _log_q(X, mu, lam_a, SV)
        q = jnp.exp(lq)
        return q, sf2_a * sol.T @ (beta_a * q)

    qh, C = jax.vmap(first)(lam, sf2, beta)
    C = C.T
    mean = sf2 * jnp.sum(beta * qh, axis=1) + phi @ mu

    ia, ib = _pairs(D)
    zero = jnp.zeros_like(S)

    def pair(a, b):
        s2 = sf2[a] * sf2[b]
        diag = jnp.where(a == b, 1.0, 0.0)
        K = model.inv_kn[a]
        bQh = _Q_contract(X, mu, lam[a], lam[b], V, S, s2 * beta[a], beta[b], 0.0, K)
        # s2 beta_a^T Qt beta_b - [a == b] s_a^4 tr(K_a^-1 Qt)
        wQt = _Q_contract(
            X, mu, lam[a], lam[b], zero, SV, s2 * beta[a], beta[b], -diag * sf2[a] ** 2, K
        )
        cov_m = bQh - s2 * (beta[a] @ qh[a]) * (beta[b] @ qh[b])
        mvar = wQt - bQh + diag * sf2[a]
        return cov_m, mvar

    cov_m, mvar = jax.vmap(pair)(ia, ib)
    cov_m = _fill_sym(cov_m, ia, ib, D) + _linear_cross(C, phi, S)
    mvar = _fill_sym(mvar, ia, ib, D) + _linear_cross(C, phi, V)
    if repair:
        cov_m, bad1 = psd_repair(cov_m)
        mvar, bad2 = psd_repair(mvar)
        bad = bad1 | bad2
    else:
        cov_m, mvar, bad = symmetrize(cov_m), symmetrize(mvar), jnp.array(False)
    return HierMoments(mean, cov_m, mvar, C), bad
