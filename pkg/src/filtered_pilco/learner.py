"""Policy evaluation, gradients, BFGS policy optimization and the outer learning loop."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import jax
import jax.numpy as jnp
import numpy as np

from filtered_pilco.cartpole import UNFILTERED, CartpoleParams, execute_episode
from filtered_pilco.cost import CostSpec
from filtered_pilco.gp import GPDataset, train
from filtered_pilco.policy import PolicyParams, init_policy
from filtered_pilco.rollout import (
    DIVERGENCE_NORM,
    MODES,
    UNFILTERED_FULL,
    discounted,
    marginals_core,
    stage_costs,
)

logger = logging.getLogger(__name__)

ANALYTIC = "analytic"
FINITE_DIFFERENCE = "finite_difference"
FD_STEP = 1e-5


class GradientError(FloatingPointError):
    """Non-finite gradient; ``step`` is the first rollout step with non-finite moments."""

    def __init__(self, msg, step=None):
        super().__init__(msg)
        self.step = step


@dataclass(frozen=True)
class OptimizerConfig:
    max_evals: int = 150
    restarts: int = 3
    armijo: float = 1e-4
    shrink: float = 0.5
    max_backtracks: int = 20
    gtol: float = 1e-6
    grad_mode: str = ANALYTIC
    fd_check: bool = True  # directional finite-difference probe before the first step
    seed: int = 0

    def __post_init__(self):
        if self.max_evals < 0:
            raise ValueError("max_evals must be non-negative")
        if self.grad_mode not in (ANALYTIC, FINITE_DIFFERENCE):
            raise ValueError(f"unknown gradient mode {self.grad_mode!r}")


# -- objective --------------------------------------------------------------


def _objective(vec, template, model, mu0, V0, noise, mode, spec):
    policy = template.from_vector(vec)
    mu_x, sigma_x, _, _ = marginals_core(mode, policy, model, mu0, V0, noise, spec.horizon)
    costs = stage_costs(mode, spec, mu_x, sigma_x)
    size = jnp.maximum(jnp.max(jnp.abs(mu_x)), jnp.max(jnp.abs(sigma_x)))
    return discounted(costs, spec.gamma), size


_value = jax.jit(_objective, static_argnames=("mode", "spec"))
_value_and_grad = jax.jit(
    jax.value_and_grad(_objective, has_aux=True), static_argnames=("mode", "spec")
)


@dataclass
class PolicyObjective:
    """``J(theta)`` for one model, prediction mode and initial state distribution.

    ``theta`` is the flat vector of :meth:`PolicyParams.to_vector`.  Diverged
    rollouts evaluate to ``+inf``.
    """

    template: PolicyParams
    model: object
    spec: CostSpec
    mode: str
    init: tuple
    noise: np.ndarray
    n_evals: int = field(default=0, init=False)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown prediction mode {self.mode!r}")
        self._args = (
            jax.tree_util.tree_map(jnp.asarray, self.model),
            jnp.asarray(self.init[0], float),
            jnp.asarray(self.init[1], float),
            jnp.asarray(self.noise, float),
        )

    def _ok(self, J, size):
        return bool(np.isfinite(J) and np.isfinite(size) and size < DIVERGENCE_NORM)

    def value(self, vec) -> float:
        self.n_evals += 1
        J, size = _value(jnp.asarray(vec), self.template, *self._args, self.mode, self.spec)
        return float(J) if self._ok(J, size) else np.inf

    def value_and_grad(self, vec):
        self.n_evals += 1
        (J, size), g = _value_and_grad(
            jnp.asarray(vec), self.template, *self._args, self.mode, self.spec
        )
        if not self._ok(J, size):
            return np.inf, None
        g = np.asarray(g)
        if not np.all(np.isfinite(g)):
            raise GradientError(
                f"non-finite policy gradient in {self.mode} mode", self._first_bad_step(vec)
            )
        return float(J), g

    def _first_bad_step(self, vec):
        mu_x, sigma_x, _, _ = marginals_core(
            self.mode, self.template.from_vector(jnp.asarray(vec)), *self._args, self.spec.horizon
        )
        finite = np.isfinite(np.asarray(mu_x)).all(1) & np.isfinite(np.asarray(sigma_x)).all((1, 2))
        bad = np.flatnonzero(~finite)
        return int(bad[0]) if bad.size else None


def evaluate_policy(policy: PolicyParams, model, spec: CostSpec, mode, init, noise):
    """Expected total cost ``J`` and a divergence flag (``J = inf`` when set)."""
    J = PolicyObjective(policy, model, spec, mode, init, noise).value(policy.to_vector())
    return J, not np.isfinite(J)


def finite_difference_gradient(fun, vec, step=FD_STEP):
    """Central differences of a scalar function, one coordinate at a time."""
    vec = np.asarray(vec, float)
    g = np.empty_like(vec)
    for i in range(vec.size):
        e = np.zeros_like(vec)
        e[i] = step
        g[i] = (fun(vec + e) - fun(vec - e)) / (2 * step)
    return g


def policy_gradient(policy: PolicyParams, model, spec: CostSpec, mode, init, noise, grad_mode=ANALYTIC):
    """``dJ/dtheta`` with respect to :meth:`PolicyParams.to_vector`.

    ``analytic`` back-propagates through every rollout step;
    ``finite_difference`` uses central differences with step ``1e-5``.
    """
    obj = PolicyObjective(policy, model, spec, mode, init, noise)
    vec = np.asarray(policy.to_vector())
    if grad_mode == ANALYTIC:
        J, g = obj.value_and_grad(vec)
        if g is None:
            raise GradientError(f"{mode} rollout diverged", obj._first_bad_step(vec))
        return g
    if grad_mode == FINITE_DIFFERENCE:
        return finite_difference_gradient(obj.value, vec)
    raise ValueError(f"unknown gradient mode {grad_mode!r}")


# -- BFGS ---------------------------------------------------------------------


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    fun0: float
    n_evals: int
    n_iter: int
    restarts_used: int
    trace: list  # best J after each evaluation


def _fd_grad_fun(fun):
    def fg(x):
        f = fun(x)
        if not np.isfinite(f):
            return f, None
        return f, finite_difference_gradient(fun, x)

    return fg


def bfgs_minimize(fun_and_grad, x0, config: OptimizerConfig, fun=None) -> OptimizeResult:
    """Quasi-Newton minimization with a backtracking Armijo line search.

    ``fun_and_grad(x)`` returns ``(f, g)`` and ``(inf, None)`` at infeasible
    points.  Every call counts against ``config.max_evals``.  When the line
    search fails the inverse Hessian is reset and the search restarts from
    the best point, at most ``config.restarts`` times.  The returned point is
    the best one evaluated, so ``fun`` never exceeds the value at ``x0``.
    """
    x0 = np.asarray(x0, float)
    if config.max_evals == 0:
        return OptimizeResult(x0, np.nan, np.nan, 0, 0, 0, [])

    f, g = fun_and_grad(x0)
    evals = 1
    if g is None:
        logger.warning("objective is infinite at the initial point; returning it unchanged")
        return OptimizeResult(x0, f, f, evals, 0, 0, [f])
    if config.fd_check and fun is not None:
        _directional_check(fun, x0, g, config.seed)

    best_x, best_f, best_g, f0 = x0, f, g, f
    trace = [f]
    x = x0
    H = None
    restarts = 0
    it = 0
    while evals < config.max_evals:
        if np.max(np.abs(g)) < config.gtol:
            break
        if H is None:
            d = -g / max(1.0, np.linalg.norm(g))
        else:
            d = -H @ g
        slope = g @ d
        if slope >= 0:
            H = None
            d = -g / max(1.0, np.linalg.norm(g))
            slope = g @ d
        alpha = 1.0
        accepted = False
        for _ in range(config.max_backtracks):
            if evals >= config.max_evals:
                break
            xn = x + alpha * d
            fn, gn = fun_and_grad(xn)
            evals += 1
            if fn < best_f and gn is not None:
                best_x, best_f, best_g = xn, fn, gn
            trace.append(best_f)
            if gn is not None and fn <= f + config.armijo * alpha * slope:
                accepted = True
                break
            alpha *= config.shrink
        if not accepted:
            if restarts >= config.restarts or evals >= config.max_evals:
                break
            restarts += 1
            logger.info("line search failed; restart %d from the best point", restarts)
            x, f, g = best_x, best_f, best_g
            H = None
            continue
        s, y = xn - x, gn - g
        sy = s @ y
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            if H is None:
                H = (sy / (y @ y)) * np.eye(x.size)
            rho = 1.0 / sy
            Hy = H @ y
            H = H + ((sy + y @ Hy) * rho * rho) * np.outer(s, s) - rho * (np.outer(Hy, s) + np.outer(s, Hy))
        x, f, g = xn, fn, gn
        it += 1
    return OptimizeResult(best_x, best_f, f0, evals, it, restarts, trace)


def _directional_check(fun, x, g, seed, tol=1e-3):
    """Compare the gradient against a central difference along a random direction."""
    d = np.random.default_rng(seed).standard_normal(x.size)
    d /= np.linalg.norm(d)
    fd = (fun(x + FD_STEP * d) - fun(x - FD_STEP * d)) / (2 * FD_STEP)
    an = g @ d
    rel = abs(fd - an) / max(abs(fd), abs(an), 1e-8)
    if rel > tol:
        logger.warning("gradient check: directional derivative %.6g vs finite difference %.6g", an, fd)
    else:
        logger.info("gradient check passed (relative error %.2e)", rel)
    return rel


def optimize_policy(
    policy: PolicyParams, model, spec: CostSpec, mode, init, noise, config: OptimizerConfig
) -> tuple[PolicyParams, OptimizeResult]:
    """Minimize the expected total cost over the policy parameters.

    Returns the best policy found and the optimizer record; the policy is
    the input one if nothing improved on it (including ``max_evals = 0``).
    """
    obj = PolicyObjective(policy, model, spec, mode, init, noise)
    if config.grad_mode == ANALYTIC:
        fg, fun = obj.value_and_grad, obj.value
    else:
        fg, fun = _fd_grad_fun(obj.value), None
    res = bfgs_minimize(fg, np.asarray(policy.to_vector()), config, fun=fun)
    if res.n_evals == 0 or not res.fun < res.fun0:
        return policy, res
    best = policy.from_vector(jnp.asarray(res.x))
    best = PolicyParams(*(np.asarray(a) for a in best[:3]), policy.u_max)
    logger.info("%s: J %.4f -> %.4f in %d evaluations", mode, res.fun0, res.fun, res.n_evals)
    return best, res


# -- outer loop ---------------------------------------------------------------

HISTORY_HEADER = ("iteration", "J_predicted", "J_empirical", "episode_seconds")


@dataclass
class LoopResult:
    model: object
    policy: PolicyParams
    dataset: GPDataset
    history: list  # rows matching HISTORY_HEADER
    records: list

    def write_history(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(HISTORY_HEADER)
            for row in self.history:
                w.writerow([row[0], repr(float(row[1])), repr(float(row[2])), repr(float(row[3]))])


def pilco_loop(
    sim: CartpoleParams,
    episodes: int,
    mode_execute=UNFILTERED,
    mode_predict=UNFILTERED_FULL,
    seed: int = 0,
    n_centroids: int = 100,
    opt_config: OptimizerConfig | None = None,
    spec: CostSpec | None = None,
    optimize_last: bool = True,
    stop_when_converged: bool = False,
    policy: PolicyParams | None = None,
) -> LoopResult:
    """Alternate interaction, model learning and policy optimization.

    Each iteration executes the current policy for one episode (the first
    one, having no model yet, always executes unfiltered), retrains the GP on
    all data and optimizes the policy under ``mode_predict``.  History rows
    hold the predicted ``J`` after optimization, the realized episode cost
    and the cumulative interaction time in seconds.
    """
    if episodes < 1:
        raise ValueError("episodes must be at least 1")
    opt_config = opt_config or OptimizerConfig(seed=seed)
    spec = spec or CostSpec(length=sim.length, horizon=sim.horizon)
    if policy is None:
        policy = init_policy(sim.init_mean, sim.init_cov, n_centroids, 1, sim.u_max, seed)
    init = (np.asarray(sim.init_mean, float), sim.init_cov)
    noise = sim.noise_cov
    model = None
    dataset = None
    history, records = [], []
    J_prev = None
    for it in range(episodes):
        mode = mode_execute if model is not None else UNFILTERED
        rec = execute_episode(
            sim, policy, model, mode, seed=seed * 100_003 + it, cost_spec=spec, episode=it
        )
        records.append(rec)
        data = rec.to_dataset()
        dataset = data if dataset is None else dataset.extend(data)
        model = train(dataset, fixed_noise=np.square(sim.obs_sd))
        J = np.nan
        if optimize_last or it < episodes - 1:
            policy, res = optimize_policy(policy, model, spec, mode_predict, init, noise, opt_config)
            J = res.fun if res.n_evals else np.nan
        seconds = (it + 1) * sim.horizon * sim.dt
        history.append((it, J, float(np.sum(rec.cost)), seconds))
        logger.info("iteration %d: J_predicted %.4f, episode cost %.4f", it, J, np.sum(rec.cost))
        if stop_when_converged and J_prev is not None and np.isfinite(J):
            if abs(J_prev - J) < 1e-3 * abs(J_prev):
                break
        J_prev = J
    return LoopResult(model, policy, dataset, history, records)
