# One cartpole episode with the execution filter in the loop.
#
# A GP is learned from a few random-force episodes, then a random policy acts
# on the filtered belief.  The printout compares raw camera readings and the
# belief mean against the true state.  Angles are tracked well; the cart
# velocity drifts because the belief variance only reflects GP uncertainty,
# so a confident but biased model outweighs the noisy velocity reading.
#
#   python demos/02_filtered_episode.py

import numpy as np

import filtered_pilco  # noqa: F401
from filtered_pilco.cartpole import FILTERED, CartpoleParams, execute_episode, observe, step
from filtered_pilco.gp import GPDataset, train
from filtered_pilco.policy import init_policy

sim = CartpoleParams()
rng = np.random.default_rng(1)

X, Y = [], []
for _ in range(4):
    x = np.asarray(sim.init_mean) + 0.2 * rng.standard_normal(4)
    for _ in range(sim.horizon):
        u = rng.uniform(-sim.u_max, sim.u_max)
        nxt = step(sim, x, u)
        X.append(np.r_[x, u])
        Y.append(observe(sim, nxt, rng))
        x = nxt
model = train(GPDataset(np.array(X), np.array(Y)), fixed_noise=np.square(sim.obs_sd))
print(f"trained on {len(X)} transitions")

policy = init_policy(sim.init_mean, sim.init_cov, n_centroids=20, seed=2)
rec = execute_episode(sim, policy, model, FILTERED, seed=5)

err_z = np.abs(rec.z - rec.x)[1:]
err_b = np.abs(rec.belief_m - rec.x)[1:]
names = ["x_c", "theta", "xdot_c", "thetadot"]
print("mean abs error   camera   belief")
for i, n in enumerate(names):
    print(f"  {n:9s} {err_z[:, i].mean():9.4f} {err_b[:, i].mean():8.4f}")
sd = np.sqrt(np.array([np.diag(V) for V in rec.belief_V]))[1:]
print("mean belief sd   ", "  ".join(f"{v:.3f}" for v in sd.mean(0)))
print(f"episode cost {rec.cost.sum():.2f} over {len(rec.cost)} steps")
