# GP prediction at a Gaussian input: closed-form moments vs sampling.
#
#   python demos/01_uncertain_inputs.py

import numpy as np

import filtered_pilco  # noqa: F401  (float64 in jax)
from filtered_pilco.gp import GPDataset, predict_point, train
from filtered_pilco.moments import GaussianVec, predict_hierarchical, predict_uncertain

rng = np.random.default_rng(0)

# a one-output GP on a wiggly 2-D function
X = rng.uniform(-3, 3, size=(80, 2))
y = np.sin(X[:, :1]) * np.cos(0.5 * X[:, 1:]) + 0.05 * rng.normal(size=(80, 1))
model = train(GPDataset(X, y))
print("lengthscales", model.lengthscales.round(3), "signal var", model.signal_var.round(3))

# push N(mu, S) through the GP
mu = np.array([0.5, -0.3])
S = np.array([[0.3, 0.1], [0.1, 0.2]])
out = predict_uncertain(model, GaussianVec(mu, S))

# sampling check: draw inputs, evaluate the posterior, add the mean posterior variance
xs = rng.multivariate_normal(mu, S, size=2000)
pts = [predict_point(model, x) for x in xs]
means = np.array([m for m, _ in pts])
varis = np.array([v for _, v in pts])
print(f"mean      closed form {float(out.mean[0]): .4f}   sampled {means.mean(): .4f}")
print(f"variance  closed form {float(out.cov[0, 0]): .4f}   sampled {means.var() + varis.mean(): .4f}")

# hierarchical input: the mean itself is uncertain (S) and each state has spread V
V = 0.1 * np.eye(2)
hm = predict_hierarchical(model, GaussianVec(mu, S), V)
flat = predict_uncertain(model, GaussianVec(mu, S + V))
print(f"cov of mean + mean of var {float(hm.cov_of_mean[0, 0] + hm.mean_of_var[0, 0]):.6f}")
print(f"flattened variance        {float(flat.cov[0, 0]):.6f}")
