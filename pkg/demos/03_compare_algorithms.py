# The four-way comparison at a tiny budget, start to finish.
#
# Runs data collection, model fitting, policy optimization and evaluation for
# every algorithm, then prints the final-timestep costs.  Budgets are far too
# small to swing the pole up; see configs/desk.cfg for the real run.
#
#   python demos/03_compare_algorithms.py [out_dir]

import sys
from pathlib import Path

from filtered_pilco import experiment as ex

out = Path(sys.argv[1] if len(sys.argv) > 1 else "results/demo")
cfg = ex.load_config(
    None, episodes=2, centroids=5, max_evals=5, restarts=1, data_max_evals=5, rollouts=5, horizon=15,
    sd_samples=1000,
)
ex.run_all(cfg, out)

print(f"{'algorithm':16s} {'predicted':>10s} {'empirical':>10s}")
for alg in cfg.algorithms:
    pred, _ = ex.read_cost_csv(out / f"predicted_{alg}.csv")
    emp, sd = ex.read_cost_csv(out / f"empirical_{alg}.csv")
    print(f"{alg:16s} {pred[-1]:10.3f} {emp[-1]:10.3f} +- {sd[-1]:.3f}")
print(f"plots: {out / 'predicted.svg'}, {out / 'empirical.svg'}")
