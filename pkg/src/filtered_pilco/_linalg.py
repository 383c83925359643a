"""Small linear-algebra helpers shared by the numpy and jax code paths."""

import logging

import jax
import jax.numpy as jnp
import numpy as np
from scipy import linalg

logger = logging.getLogger(__name__)

JITTER_LADDER = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
PSD_TOL = 1e-10


class FactorizationError(np.linalg.LinAlgError):
    """Raised when a kernel matrix stays indefinite after the jitter ladder."""


def jitchol(A, what="matrix"):
    """Lower Cholesky factor of ``A``, escalating diagonal jitter on failure.

    Returns ``(L, jitter)``.
    """
    A = np.asarray(A, dtype=float)
    scale = max(float(np.mean(np.diag(A))), 1.0)
    for jitter in JITTER_LADDER:
        try:
            L = linalg.cholesky(A + jitter * scale * np.eye(A.shape[0]), lower=True)
        except linalg.LinAlgError:
            continue
        if jitter > 0:
            logger.warning("%s needed jitter %.1e to factorize", what, jitter * scale)
        return L, jitter * scale
    w = np.linalg.eigvalsh(0.5 * (A + A.T))
    raise FactorizationError(
        f"{what} is not positive definite after jitter {JITTER_LADDER[-1]:.0e} "
        f"(min eigenvalue {w.min():.3e}, size {A.shape[0]})"
    )


def symmetrize(A):
    return 0.5 * (A + jnp.swapaxes(A, -1, -2))


def psd_repair(A):
    """Symmetrize ``A`` and clip eigenvalues when one falls below -1e-10.

    Returns ``(A_repaired, repaired_flag)``.  The clip branch only runs when
    needed, so gradients through well-behaved covariances stay exact.
    """
    S = symmetrize(A)
    w_min = jnp.linalg.eigvalsh(jax.lax.stop_gradient(S))[0]
    bad = w_min < -PSD_TOL

    def clip(M):
        w, U = jnp.linalg.eigh(M)
        return symmetrize((U * jnp.maximum(w, 0.0)) @ U.T)

    out = jax.lax.cond(bad, clip, lambda M: M, S)
    return out, bad


def is_psd(A, tol=PSD_TOL):
    A = np.asarray(A)
    if not np.all(np.isfinite(A)):
        return False
    if np.max(np.abs(A - A.T), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(A), initial=0.0)):
        return False
    return bool(np.linalg.eigvalsh(0.5 * (A + A.T))[0] >= -tol)
