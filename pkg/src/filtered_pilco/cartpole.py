"""Cartpole simulator, camera noise model and episode execution."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from filtered_pilco.cost import CostSpec, state_cost
from filtered_pilco.filtering import Belief, _filter_predict, _filter_update
from filtered_pilco.gp import GPDataset
from filtered_pilco.policy import PolicyParams, policy_eval

logger = logging.getLogger(__name__)

UNFILTERED = "unfiltered"
FILTERED = "filtered"


@dataclass(frozen=True)
class CartpoleParams:
    m_cart: float = 0.5
    m_pole: float = 0.5
    length: float = 0.2
    friction: float = 0.1
    gravity: float = 9.82
    dt: float = 1.0 / 30.0
    u_max: float = 10.0
    horizon: int = 60
    substeps: int = 10
    obs_sd: tuple = None  # per-coordinate noise sd; default 0.03 scaled by dt on velocities
    init_mean: tuple = (0.0, np.pi, 0.0, 0.0)
    init_sd: tuple = (0.2, 0.2, 0.2, 0.2)

    def __post_init__(self):
        if self.obs_sd is None:
            object.__setattr__(
                self, "obs_sd", (0.03, 0.03, 0.03 / self.dt, 0.03 / self.dt)
            )
        for name in ("m_cart", "m_pole", "length", "gravity", "dt", "u_max"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def noise_cov(self):
        return np.diag(np.square(self.obs_sd))

    @property
    def init_cov(self):
        return np.diag(np.square(self.init_sd))

    def with_(self, **kw) -> "CartpoleParams":
        return replace(self, **kw)


def ode(p: CartpoleParams, x, u):
    """Time derivative of ``[x_c, theta, xdot_c, thetadot]`` under force ``u``.

    The pole is a uniform rod of mass ``m_pole`` and length ``length``;
    ``theta = 0`` is upright and the tip sits at ``x_c - l sin(theta)``.
    """
    _, th, dx, dth = x
    s, c = np.sin(th), np.cos(th)
    mc, mp, l, b, g = p.m_cart, p.m_pole, p.length, p.friction, p.gravity
    f = u - b * dx
    ddx = (-2 * mp * l * dth**2 * s + 3 * mp * g * s * c + 4 * f) / (4 * (mc + mp) - 3 * mp * c**2)
    ddth = (-3 * mp * l * dth**2 * s * c + 6 * (mc + mp) * g * s + 6 * f * c) / (
        4 * l * (mc + mp) - 3 * mp * l * c**2
    )
    return np.array([dx, dth, ddx, ddth])


def step(p: CartpoleParams, x, u, substeps=None):
    """Advance one control interval with the force held constant (RK4)."""
    u = float(np.clip(np.squeeze(u), -p.u_max, p.u_max))
    n = p.substeps if substeps is None else substeps
    h = p.dt / n
    x = np.asarray(x, float)
    for _ in range(n):
        k1 = ode(p, x, u)
        k2 = ode(p, x + 0.5 * h * k1, u)
        k3 = ode(p, x + 0.5 * h * k2, u)
        k4 = ode(p, x + h * k3, u)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


def energy(p: CartpoleParams, x):
    """Mechanical energy (kinetic plus potential, zero at theta = pi/2)."""
    _, th, dx, dth = x
    mc, mp, l, g = p.m_cart, p.m_pole, p.length, p.gravity
    kin = 0.5 * (mc + mp) * dx**2 - 0.5 * mp * l * np.cos(th) * dx * dth + mp * l**2 * dth**2 / 6.0
    return kin + 0.5 * mp * g * l * np.cos(th)


def observe(p: CartpoleParams, x, rng):
    """Noisy camera reading ``z = x + eps``; ``rng`` is a seed or a Generator."""
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    return np.asarray(x, float) + np.asarray(p.obs_sd) * rng.standard_normal(len(p.obs_sd))


@dataclass
class TrajectoryRecord:
    """Per-timestep log of one executed episode.

    Arrays are indexed by ``t = 0..T``; ``u`` has ``T`` rows.  ``belief_m`` and
    ``belief_V`` hold the posterior belief the policy acted on (unfiltered
    episodes store the raw observation with zero covariance).
    """

    mode: str
    x: np.ndarray
    z: np.ndarray
    u: np.ndarray
    belief_m: np.ndarray
    belief_V: np.ndarray
    cost: np.ndarray
    seed: int
    aborted: str | None = None
    episode: int = 0

    def to_dataset(self) -> GPDataset:
        """State-action pairs mapped to the next observation."""
        T = self.u.shape[0]
        return GPDataset(
            inputs=np.hstack([self.x[:T], self.u]),
            targets=self.z[1 : T + 1],
            episode=np.full(T, self.episode),
            t=np.arange(T),
        )


def execute_episode(
    p: CartpoleParams,
    policy: PolicyParams,
    model=None,
    mode: str = FILTERED,
    seed: int = 0,
    cost_spec: CostSpec | None = None,
    filter_noise=None,
    episode: int = 0,
) -> TrajectoryRecord:
    """Run one episode of ``p.horizon`` steps on the simulator.

    ``mode="unfiltered"`` feeds raw observations to the policy.
    ``mode="filtered"`` starts from the belief ``N(init_mean, init_cov)``,
    fuses each new observation, acts on the posterior mean and predicts
    the next prior through the GP ``model``.  ``filter_noise`` defaults to
    the simulator's noise covariance.
    """
    if mode not in (FILTERED, UNFILTERED):
        raise ValueError(f"unknown execution mode {mode!r}")
    if mode == FILTERED and model is None:
        raise ValueError("filtered execution needs a dynamics model")
    spec = cost_spec or CostSpec(length=p.length, horizon=p.horizon)
    rng = np.random.default_rng(seed)
    T = p.horizon
    D = len(p.init_mean)
    F = policy.n_action
    N = p.noise_cov if filter_noise is None else np.asarray(filter_noise, float)

    xs = np.full((T + 1, D), np.nan)
    zs = np.full((T + 1, D), np.nan)
    us = np.full((T, F), np.nan)
    bm = np.full((T + 1, D), np.nan)
    bV = np.full((T + 1, D, D), np.nan)

    m0 = np.asarray(p.init_mean, float)
    x = m0 + np.asarray(p.init_sd) * rng.standard_normal(D)
    belief = Belief(m0, p.init_cov)
    aborted = None
    for t in range(T + 1):
        z = observe(p, x, rng)
        xs[t], zs[t] = x, z
        if mode == FILTERED:
            if t > 0:
                belief = _filter_update(belief, z, N)
            bm[t], bV[t] = belief.m, belief.V
        else:
            bm[t], bV[t] = z, 0.0
        if t == T:
            break
        u = np.asarray(policy_eval(policy, bm[t]))
        us[t] = u
        if mode == FILTERED:
            belief = _filter_predict(belief, u, model)
        x = step(p, x, u)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(np.asarray(belief.V)))):
            aborted = f"non-finite state or belief after step {t}"
            logger.warning("episode seed %d aborted: %s", seed, aborted)
            break
    cost = np.asarray(state_cost(spec, xs))
    return TrajectoryRecord(mode, xs, zs, us, bm, bV, cost, seed, aborted, episode)
