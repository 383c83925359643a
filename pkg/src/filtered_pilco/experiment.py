"""The controlled four-algorithm comparison: shared data, shared model, separate policies.

Every stage writes plain-text artifacts into an output directory.  Stages
that are expensive (policy optimization, evaluation episodes) are skipped
when an artifact with a matching input key already exists, so an
interrupted ``compare`` can resume and repeated runs are cheap.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
import traceback
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from filtered_pilco.cartpole import FILTERED, UNFILTERED, CartpoleParams, execute_episode
from filtered_pilco.cost import CostSpec
from filtered_pilco.gp import GPDataset, load_model, save_model, train
from filtered_pilco.learner import OptimizerConfig, optimize_policy, pilco_loop
from filtered_pilco.policy import PolicyParams, init_policy, load_policy, save_policy
from filtered_pilco.rollout import FILTERED_FULL, FILTERED_MAP, UNFILTERED_FULL, rollout

logger = logging.getLogger(__name__)

# algorithm -> (prediction mode used for optimization, execution mode)
ALGORITHMS = {
    "pilco": (UNFILTERED_FULL, UNFILTERED),
    "dallaire": (FILTERED_MAP, FILTERED),
    "deisenroth2013": (UNFILTERED_FULL, FILTERED),
    "ours": (FILTERED_FULL, FILTERED),
}

CSV_HEADER = ("t", "mean_cost", "sd_cost")


@dataclass(frozen=True)
class ExperimentConfig:
    """Flat experiment settings; see :func:`load_config` for the file format."""

    seed: int = 0
    episodes: int = 11
    centroids: int = 100
    max_evals: int = 150
    restarts: int = 3
    data_max_evals: int = 150  # optimizer budget inside the data-generating loop
    data_restarts: int = 3
    rollouts: int = 100
    algorithms: tuple = ("pilco", "dallaire", "deisenroth2013", "ours")
    policy_seed: int = 1  # the shared initialization of every compared policy
    eval_seed: int = 10_000  # evaluation episode k uses seed eval_seed + k
    sd_samples: int = 10_000
    u_max: float = 10.0
    horizon: int = 60
    sigma_c: float = 0.25
    gamma: float = 1.0

    def __post_init__(self):
        algs = self.algorithms
        if isinstance(algs, str):
            algs = tuple(a.strip() for a in algs.split(",") if a.strip())
        object.__setattr__(self, "algorithms", tuple(algs))
        if not self.algorithms:
            raise ValueError("select at least one algorithm")
        unknown = set(self.algorithms) - set(ALGORITHMS)
        if unknown:
            raise ValueError(f"unknown algorithm(s) {sorted(unknown)}; choose from {list(ALGORITHMS)}")
        if self.episodes < 1 or self.rollouts < 1:
            raise ValueError("episodes and rollouts must be at least 1")

    @property
    def sim(self) -> CartpoleParams:
        return CartpoleParams(u_max=self.u_max, horizon=self.horizon)

    @property
    def cost(self) -> CostSpec:
        return CostSpec(sigma_c=self.sigma_c, length=self.sim.length, gamma=self.gamma, horizon=self.horizon)

    def optimizer(self, data=False) -> OptimizerConfig:
        if data:
            return OptimizerConfig(max_evals=self.data_max_evals, restarts=self.data_restarts, seed=self.seed)
        return OptimizerConfig(max_evals=self.max_evals, restarts=self.restarts, seed=self.seed)

    def with_(self, **kw) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {','.join(v) if isinstance(v, tuple) else v}")
        return "\n".join(lines) + "\n"


def load_config(path=None, **overrides) -> ExperimentConfig:
    """Read ``key = value`` lines (``#`` starts a comment); overrides win.

    Keys are the :class:`ExperimentConfig` field names; lists are
    comma-separated.
    """
    values = {}
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    if path is not None:
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = _parse(types[key], val)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**values)


def _parse(kind, val):
    kind = str(kind)
    if kind == "int":
        return int(val)
    if kind == "float":
        return float(val)
    return val


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _key(*parts) -> str:
    return hashlib.sha256(json.dumps(parts, sort_keys=True, default=str).encode()).hexdigest()[:16]


# -- stages -------------------------------------------------------------------


def generate_data(cfg: ExperimentConfig, out) -> Path:
    """Run baseline PILCO for ``cfg.episodes`` episodes and save the collected data."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    res = pilco_loop(
        cfg.sim,
        cfg.episodes,
        mode_execute=UNFILTERED,
        mode_predict=UNFILTERED_FULL,
        seed=cfg.seed,
        n_centroids=cfg.centroids,
        opt_config=cfg.optimizer(data=True),
        spec=cfg.cost,
        optimize_last=False,
    )
    path = out / "dataset.txt"
    res.dataset.save(path)
    res.write_history(out / "data_history.csv")
    return path


def train_model(cfg: ExperimentConfig, dataset_path, out) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    data = GPDataset.load(dataset_path)
    model = train(data, fixed_noise=np.square(cfg.sim.obs_sd))
    path = out / "model.txt"
    save_model(model, path)
    return path


def initial_policy(cfg: ExperimentConfig) -> PolicyParams:
    sim = cfg.sim
    return init_policy(sim.init_mean, sim.init_cov, cfg.centroids, 1, sim.u_max, cfg.policy_seed)


def optimize(cfg: ExperimentConfig, model_path, mode, out) -> Path:
    """Optimize the shared initial policy under ``mode``; cached by input key."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"policy_{mode}.txt"
    key = _key(file_hash(model_path), mode, cfg.centroids, cfg.policy_seed, cfg.max_evals,
               cfg.restarts, cfg.seed, cfg.u_max, cfg.horizon, cfg.sigma_c, cfg.gamma)
    key_path = out / f"policy_{mode}.key"
    if path.exists() and key_path.exists() and key_path.read_text().split()[0] == key:
        logger.info("reusing %s", path)
        return path
    model = load_model(model_path)
    sim = cfg.sim
    t0 = time.perf_counter()
    policy, res = optimize_policy(
        initial_policy(cfg), model, cfg.cost, mode, (np.asarray(sim.init_mean), sim.init_cov),
        sim.noise_cov, cfg.optimizer(),
    )
    save_policy(policy, path)
    key_path.write_text(
        f"{key}\nJ0 = {res.fun0!r}\nJ = {res.fun!r}\nevaluations = {res.n_evals}\n"
        f"restarts = {res.restarts_used}\nseconds = {time.perf_counter() - t0:.1f}\n"
    )
    return path


def predicted_costs(cfg: ExperimentConfig, model, policy, mode):
    """Per-timestep predicted cost mean and sd."""
    sim = cfg.sim
    res = rollout(mode, (sim.init_mean, sim.init_cov), policy, model, cfg.cost, sim.noise_cov)
    return res.cost, res.cost_sd(cfg.cost, cfg.sd_samples, cfg.seed)


def empirical_costs(cfg: ExperimentConfig, model, policy, execute):
    """Costs of ``cfg.rollouts`` seeded episodes, shape ``(rollouts, T + 1)``."""
    sim = cfg.sim
    rows = []
    for k in range(cfg.rollouts):
        rec = execute_episode(
            sim, policy, model if execute == FILTERED else None, execute,
            seed=cfg.eval_seed + k, cost_spec=cfg.cost,
        )
        if rec.aborted:
            raise RuntimeError(f"evaluation episode {k} aborted: {rec.aborted}")
        rows.append(rec.cost)
    return np.array(rows)


def write_cost_csv(path, mean, sd):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for t, (m, s) in enumerate(zip(mean, sd)):
            w.writerow([t, repr(float(m)), repr(float(s))])


def read_cost_csv(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return (
        np.array([float(r["mean_cost"]) for r in rows]),
        np.array([float(r["sd_cost"]) for r in rows]),
    )


def compare(cfg: ExperimentConfig, dataset_path, out) -> Path:
    """Train the shared model, optimize, predict and execute every selected algorithm.

    Writes ``predicted_<alg>.csv``, ``empirical_<alg>.csv``, ``predicted.svg``,
    ``empirical.svg`` and ``report.txt`` into ``out``.  A failing stage is
    recorded in ``failures.txt`` and the remaining algorithms still run.
    """
    from filtered_pilco.plotting import plot_costs

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text())
    failures = []
    data_hash = file_hash(dataset_path)
    model_path = out / "model.txt"
    model_key = out / "model.key"
    mkey = _key(data_hash)
    if not (model_path.exists() and model_key.exists() and model_key.read_text().strip() == mkey):
        train_model(cfg, dataset_path, out)
        model_key.write_text(mkey + "\n")
    model_hash = file_hash(model_path)
    model = load_model(model_path)

    predicted, empirical = {}, {}
    for alg in cfg.algorithms:
        mode, execute = ALGORITHMS[alg]
        try:
            policy_path = optimize(cfg, model_path, mode, out)
            policy = load_policy(policy_path)
            mean, sd = predicted_costs(cfg, model, policy, mode)
            write_cost_csv(out / f"predicted_{alg}.csv", mean, sd)
            predicted[alg] = (mean, sd)

            emp_path = out / f"empirical_{alg}.csv"
            ekey = _key(file_hash(policy_path), model_hash, execute, cfg.rollouts, cfg.eval_seed,
                        cfg.horizon, cfg.sigma_c)
            ekey_path = out / f"empirical_{alg}.key"
            if not (emp_path.exists() and ekey_path.exists() and ekey_path.read_text().strip() == ekey):
                costs = empirical_costs(cfg, model, policy, execute)
                write_cost_csv(emp_path, costs.mean(0), costs.std(0))
                ekey_path.write_text(ekey + "\n")
            empirical[alg] = read_cost_csv(emp_path)
        except Exception as exc:  # keep going; the manifest records it
            logger.error("%s failed: %s", alg, exc)
            failures.append((alg, f"{type(exc).__name__}: {exc}", traceback.format_exc()))

    if predicted:
        plot_costs(predicted, out / "predicted.svg", "Predicted cost per timestep")
    if empirical:
        plot_costs(empirical, out / "empirical.svg", "Empirical cost per timestep")

    lines = [
        f"dataset = {Path(dataset_path).resolve()}",
        f"dataset_sha256 = {data_hash}",
        f"model_sha256 = {model_hash}",
        f"config_key = {config_key(cfg)}",
    ]
    for alg in cfg.algorithms:
        if alg in predicted and alg in empirical:
            lines.append(
                f"{alg}: predicted_final = {predicted[alg][0][-1]:.6f}  "
                f"empirical_final = {empirical[alg][0][-1]:.6f} +- {empirical[alg][1][-1]:.6f}"
            )
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    manifest = out / "failures.txt"
    if failures:
        manifest.write_text("".join(f"[{a}] {msg}\n{tb}\n" for a, msg, tb in failures))
    elif manifest.exists():
        manifest.unlink()
    return out


def config_key(cfg: ExperimentConfig) -> str:
    return _key(asdict(cfg))


def run_all(cfg: ExperimentConfig, out) -> Path:
    """Generate the shared dataset (unless present for this config) and run the comparison."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    data_path = out / "dataset.txt"
    dkey_path = out / "dataset.key"
    dkey = _key(cfg.seed, cfg.episodes, cfg.centroids, cfg.data_max_evals, cfg.data_restarts,
                cfg.u_max, cfg.horizon, cfg.sigma_c, cfg.gamma)
    if not (data_path.exists() and dkey_path.exists() and dkey_path.read_text().strip() == dkey):
        generate_data(cfg, out)
        dkey_path.write_text(dkey + "\n")
    return compare(cfg, data_path, out)
