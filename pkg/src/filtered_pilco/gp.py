"""Gaussian-process dynamics model.

One independent GP per output dimension, squared-exponential covariance and a
linear mean ``phi_a^T x``.  Inputs are state-action pairs, targets the noisy
next-step observations (absolute, not differences).

The trained model is a ``NamedTuple`` of arrays so it can be passed straight
into jitted moment computations.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import jax
import jax.numpy as jnp
import numpy as np
from scipy import linalg, optimize

from filtered_pilco._linalg import jitchol

logger = logging.getLogger(__name__)

DATASET_HEADER = "episode t x1 x2 x3 x4 u z1 z2 z3 z4"


@dataclass(frozen=True)
class GPDataset:
    """Training pairs ``inputs[i] -> targets[i]``.

    ``episode`` and ``t`` are bookkeeping columns carried through the text
    format; they play no role in regression.
    """

    inputs: np.ndarray
    targets: np.ndarray
    episode: np.ndarray | None = None
    t: np.ndarray | None = None

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        Y = np.atleast_2d(np.asarray(self.targets, dtype=float))
        if X.shape[0] != Y.shape[0]:
            raise ValueError(f"inputs have {X.shape[0]} rows but targets have {Y.shape[0]}")
        if X.shape[0] < 1:
            raise ValueError("dataset needs at least one row")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise ValueError("dataset contains NaN or infinite entries")
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "targets", Y)
        n = X.shape[0]
        ep = np.zeros(n, int) if self.episode is None else np.asarray(self.episode, int)
        tt = np.arange(n) if self.t is None else np.asarray(self.t, int)
        object.__setattr__(self, "episode", ep)
        object.__setattr__(self, "t", tt)

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def n_state(self):
        return self.targets.shape[1]

    @property
    def n_action(self):
        return self.inputs.shape[1] - self.targets.shape[1]

    def extend(self, other: "GPDataset") -> "GPDataset":
        return GPDataset(
            np.vstack([self.inputs, other.inputs]),
            np.vstack([self.targets, other.targets]),
            np.concatenate([self.episode, other.episode]),
            np.concatenate([self.t, other.t]),
        )

    def save(self, path):
        """Write the whitespace-separated text format with a header line."""
        D, F = self.n_state, self.n_action
        header = " ".join(
            ["episode", "t"]
            + [f"x{i + 1}" for i in range(D)]
            + (["u"] if F == 1 else [f"u{i + 1}" for i in range(F)])
            + [f"z{i + 1}" for i in range(D)]
        )
        with open(path, "w") as fh:
            fh.write(header + "\n")
            for k in range(len(self)):
                vals = [repr(float(v)) for v in np.concatenate([self.inputs[k], self.targets[k]])]
                fh.write(f"{self.episode[k]} {self.t[k]} " + " ".join(vals) + "\n")

    @classmethod
    def load(cls, path) -> "GPDataset":
        with open(path) as fh:
            header = fh.readline().split()
            rows = [line.split() for line in fh if line.strip()]
        if header[:2] != ["episode", "t"]:
            raise ValueError(f"{path}: unexpected header {' '.join(header)!r}")
        D = sum(1 for h in header if h.startswith("z"))
        arr = np.array([[float(v) for v in r] for r in rows])
        return cls(
            inputs=arr[:, 2:-D],
            targets=arr[:, -D:],
            episode=arr[:, 0].astype(int),
            t=arr[:, 1].astype(int),
        )


class GPHyper(NamedTuple):
    """Per-output hyperparameters, stacked along the first axis.

    ``lengthscales[a]`` are the square roots of the diagonal of Lambda_a.
    """

    lengthscales: np.ndarray  # (D, E)
    signal_var: np.ndarray  # (D,)
    noise_var: np.ndarray  # (D,)
    mean_weights: np.ndarray  # (D, E)


class GPModel(NamedTuple):
    """Trained GP dynamics: data, hyperparameters and cached solves.

    ``beta[a] = (K_a + noise_a I)^{-1} (y_a - X phi_a)`` and ``inv_kn[a]`` is
    ``(K_a + noise_a I)^{-1}``, both obtained from the Cholesky factor
    ``chol[a]``.  Arrays are plain numpy so the tuple is a jax pytree.
    """

    inputs: np.ndarray  # (n, E)
    targets: np.ndarray  # (n, D)
    lengthscales: np.ndarray  # (D, E)
    signal_var: np.ndarray  # (D,)
    noise_var: np.ndarray  # (D,)
    mean_weights: np.ndarray  # (D, E)
    beta: np.ndarray  # (D, n)
    chol: np.ndarray  # (D, n, n)
    inv_kn: np.ndarray  # (D, n, n)

    @property
    def n_out(self):
        return self.signal_var.shape[0]

    @property
    def n_in(self):
        return self.lengthscales.shape[1]

    @property
    def hyper(self) -> GPHyper:
        return GPHyper(self.lengthscales, self.signal_var, self.noise_var, self.mean_weights)


def se_kernel(A, B, lengthscales, signal_var):
    """Squared-exponential kernel matrix between rows of ``A`` and ``B``."""
    a = A / lengthscales
    b = B / lengthscales
    sq = (
        jnp.sum(a**2, -1)[:, None] + jnp.sum(b**2, -1)[None, :] - 2.0 * a @ b.T
    )
    return signal_var * jnp.exp(-0.5 * jnp.maximum(sq, 0.0))


def build_model(dataset: GPDataset, hyper: GPHyper) -> GPModel:
    """Factorize the kernel matrices and precompute ``beta`` for fixed hypers."""
    X, Y = dataset.inputs, dataset.targets
    n, D = Y.shape
    ls = np.asarray(hyper.lengthscales, float)
    sf2 = np.asarray(hyper.signal_var, float)
    sn2 = np.asarray(hyper.noise_var, float)
    phi = np.asarray(hyper.mean_weights, float)
    if np.any(ls <= 0) or np.any(sf2 <= 0) or np.any(sn2 <= 0):
        raise ValueError("lengthscales and variances must be positive")
    beta = np.empty((D, n))
    chol = np.empty((D, n, n))
    inv_kn = np.empty((D, n, n))
    for a in range(D):
        K = np.asarray(se_kernel(X, X, ls[a], sf2[a])) + sn2[a] * np.eye(n)
        L, _ = jitchol(K, what=f"kernel matrix of output {a}")
        chol[a] = L
        beta[a] = linalg.cho_solve((L, True), Y[:, a] - X @ phi[a])
        inv_kn[a] = linalg.cho_solve((L, True), np.eye(n))
    return GPModel(X, Y, ls, sf2, sn2, phi, beta, chol, inv_kn)


def empty_model(n_out, n_in, lengthscales=None, signal_var=None, mean_weights=None):
    """A prior-only model (no data) with the given hyperparameters."""
    ls = np.ones((n_out, n_in)) if lengthscales is None else np.asarray(lengthscales, float)
    sf2 = np.ones(n_out) if signal_var is None else np.asarray(signal_var, float)
    phi = np.zeros((n_out, n_in)) if mean_weights is None else np.asarray(mean_weights, float)
    return GPModel(
        np.zeros((0, n_in)),
        np.zeros((0, n_out)),
        ls,
        sf2,
        np.full(n_out, 1e-2),
        phi,
        np.zeros((n_out, 0)),
        np.zeros((n_out, 0, 0)),
        np.zeros((n_out, 0, 0)),
    )


# -- training -------------------------------------------------------------


def _nlml(params, X, y, log_noise_fixed):
    E = X.shape[1]
    log_ls = params[:E]
    log_sf2 = params[E]
    phi = params[E + 1 : 2 * E + 1]
    log_sn2 = jnp.where(jnp.isnan(log_noise_fixed), params[-1], log_noise_fixed)
    n = X.shape[0]
    K = se_kernel(X, X, jnp.exp(log_ls), jnp.exp(log_sf2)) + jnp.exp(log_sn2) * jnp.eye(n)
    L = jnp.linalg.cholesky(K)
    r = y - X @ phi
    alpha = jax.scipy.linalg.cho_solve((L, True), r)
    return 0.5 * r @ alpha + jnp.sum(jnp.log(jnp.diag(L))) + 0.5 * n * jnp.log(2 * jnp.pi)


_nlml_vg = jax.jit(jax.value_and_grad(_nlml))


def _check_degenerate(X, Y, tol=1e-8):
    _, idx, inv = np.unique(np.round(X / tol), axis=0, return_index=True, return_inverse=True)
    inv = np.asarray(inv).ravel()
    if len(idx) == len(X):
        return
    for g in np.flatnonzero(np.bincount(inv) > 1):
        rows = np.flatnonzero(inv == g)
        if np.ptp(Y[rows], axis=0).max() > tol:
            raise ValueError(f"duplicate input rows {rows.tolist()} have conflicting targets")


def train(
    dataset: GPDataset,
    fixed_noise=None,
    init: GPHyper | None = None,
    max_iter: int = 300,
) -> GPModel:
    """Fit hyperparameters by maximizing the log marginal likelihood.

    Each output dimension is fitted independently with L-BFGS-B on log
    lengthscales, log signal variance, linear-mean weights and (unless
    ``fixed_noise`` is given) log noise variance.  Default initialization:
    lengthscales = input standard deviations, signal variance = target
    variance, noise = 1% of target variance, mean weights from least squares.

    Parameters
    ----------
    dataset : GPDataset
    fixed_noise : array_like of shape (D,), optional
        Per-output noise variances to clamp instead of learning.
    init : GPHyper, optional
        Starting point overriding the default initialization.
    """
    X, Y = dataset.inputs, dataset.targets
    _check_degenerate(X, Y)
    n, D = Y.shape
    E = X.shape[1]
    if fixed_noise is not None:
        fixed_noise = np.broadcast_to(np.asarray(fixed_noise, float), (D,))
        if np.any(fixed_noise <= 0):
            raise ValueError("fixed_noise must be positive")

    x_sd = np.std(X, axis=0)
    x_sd = np.where(x_sd > 1e-8, x_sd, 1.0)
    phi_ls = np.linalg.lstsq(X, Y, rcond=None)[0].T if n >= E else np.zeros((D, E))

    ls_out = np.empty((D, E))
    sf2_out = np.empty(D)
    sn2_out = np.empty(D)
    phi_out = np.empty((D, E))
    for a in range(D):
        y = Y[:, a]
        y_var = max(float(np.var(y)), 1e-8)
        if init is None:
            p0 = np.concatenate([np.log(x_sd), [np.log(y_var)], phi_ls[a], [np.log(0.01 * y_var)]])
        else:
            p0 = np.concatenate(
                [
                    np.log(init.lengthscales[a]),
                    [np.log(init.signal_var[a])],
                    init.mean_weights[a],
                    [np.log(init.noise_var[a])],
                ]
            )
        log_fix = np.nan if fixed_noise is None else float(np.log(fixed_noise[a]))
        bounds = (
            [(-8.0, 8.0)] * E
            + [(np.log(y_var) - 20.0, np.log(y_var) + 10.0)]
            + [(None, None)] * E
            + [(-25.0, np.log(y_var) + 5.0)]
        )

        def fun(p):
            v, g = _nlml_vg(p, X, y, log_fix)
            v = float(v)
            if not np.isfinite(v):
                return 1e25, np.zeros_like(p)
            return v, np.asarray(g)

        res = optimize.minimize(
            fun, p0, jac=True, method="L-BFGS-B", bounds=bounds, options={"maxiter": max_iter}
        )
        p = res.x
        ls_out[a] = np.exp(p[:E])
        sf2_out[a] = np.exp(p[E])
        phi_out[a] = p[E + 1 : 2 * E + 1]
        sn2_out[a] = fixed_noise[a] if fixed_noise is not None else np.exp(p[-1])
        logger.info(
            "output %d: nlml %.4g, sf2 %.3g, noise %.3g (%s)", a, res.fun, sf2_out[a], sn2_out[a], res.message
        )
    return build_model(dataset, GPHyper(ls_out, sf2_out, sn2_out, phi_out))


# -- point prediction ------------------------------------------------------


def predict_point(model: GPModel, x):
    """Posterior mean and latent variance of every output at a single input.

    Returns
    -------
    mean : (D,) array
    var : (D,) array of posterior variances (no observation noise)
    """
    x = jnp.asarray(x, dtype=float)
    if not bool(jnp.all(jnp.isfinite(x))):
        raise ValueError("predict_point: input is not finite")
    return _predict_point(model, x)


def _predict_point(model, x):
    """Traceable core of :func:`predict_point` (no input validation)."""

    def one(ls, sf2, phi, beta, ikn):
        k = se_kernel(x[None, :], model.inputs, ls, sf2)[0]
        mean = k @ beta + phi @ x
        var = sf2 - k @ ikn @ k
        return mean, jnp.maximum(var, 0.0)

    return jax.vmap(one)(
        model.lengthscales, model.signal_var, model.mean_weights, model.beta, model.inv_kn
    )


# -- serialization ---------------------------------------------------------

_MODEL_FIELDS = ("inputs", "targets", "lengthscales", "signal_var", "noise_var", "mean_weights")


def save_model(model: GPModel, path):
    """Write hyperparameters and data as ``key = value`` lines.

    Each array is stored as ``<name>.shape = d0 d1`` followed by
    ``<name> = v0 v1 ...`` in row-major order with 17 significant digits,
    which round-trips doubles exactly.  Cached solves are rebuilt on load.
    """
    with open(path, "w") as fh:
        fh.write("# filtered-pilco GP model v1\n")
        for name in _MODEL_FIELDS:
            arr = np.asarray(getattr(model, name), float)
            fh.write(f"{name}.shape = {' '.join(str(s) for s in arr.shape)}\n")
            fh.write(f"{name} = {' '.join('%.17g' % v for v in arr.ravel())}\n")


def read_kv_arrays(path):
    """Parse the ``key = value`` array format used for models and policies."""
    shapes, values, scalars = {}, {}, {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key.endswith(".shape"):
                shapes[key[:-6]] = tuple(int(s) for s in val.split())
            else:
                parts = val.split()
                values[key] = np.array([float(v) for v in parts]) if parts else np.zeros(0)
                scalars[key] = val
    arrays = {k: values[k].reshape(shapes[k]) for k in shapes}
    return arrays, scalars


def load_model(path) -> GPModel:
    arrays, _ = read_kv_arrays(path)
    missing = [f for f in _MODEL_FIELDS if f not in arrays]
    if missing:
        raise ValueError(f"{path}: missing fields {missing}")
    ds = GPDataset(arrays["inputs"], arrays["targets"])
    hyper = GPHyper(
        arrays["lengthscales"], arrays["signal_var"], arrays["noise_var"], arrays["mean_weights"]
    )
    return build_model(ds, hyper)
