"""Data-efficient policy search for noisily observed continuous systems.

Gaussian-process dynamics, analytic moment propagation through a Bayesian
filter, RBF feedback policies and a cartpole swing-up harness comparing four
prediction/execution combinations.
"""

import jax

# Moment formulas and gradient checks need double precision throughout.
jax.config.update("jax_enable_x64", True)

from filtered_pilco.gp import GPModel, predict_point, train  # noqa: E402
from filtered_pilco.moments import (  # noqa: E402
    GaussianVec,
    MomentOut,
    predict_hierarchical,
    predict_uncertain,
)
from filtered_pilco.filtering import Belief, filter_predict, filter_update  # noqa: E402
from filtered_pilco.policy import PolicyParams, policy_eval, policy_moments  # noqa: E402
from filtered_pilco.cost import CostSpec, expected_cost, state_cost, total_cost  # noqa: E402
from filtered_pilco.cartpole import CartpoleParams  # noqa: E402
from filtered_pilco.rollout import HierBelief, RolloutResult, rollout  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    "Belief",
    "CartpoleParams",
    "CostSpec",
    "GPModel",
    "GaussianVec",
    "HierBelief",
    "MomentOut",
    "PolicyParams",
    "RolloutResult",
    "expected_cost",
    "filter_predict",
    "filter_update",
    "policy_eval",
    "policy_moments",
    "predict_hierarchical",
    "predict_point",
    "predict_uncertain",
    "rollout",
    "state_cost",
    "total_cost",
    "train",
]
