"""Command-line entry point: ``filtered-pilco <subcommand> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from filtered_pilco import experiment as ex
from filtered_pilco.rollout import MODES, RolloutDivergence


def _common(p):
    p.add_argument("--config", type=Path, help="key = value settings file")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", type=Path, default=Path("results"), help="output directory")
    p.add_argument("--algorithms", help="comma-separated subset of " + ",".join(ex.ALGORITHMS))
    p.add_argument("--rollouts", type=int, help="evaluation episodes per algorithm")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="filtered-pilco", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="run baseline PILCO and save the shared dataset")
    _common(p)
    p.add_argument("--episodes", type=int)

    p = sub.add_parser("train-model", help="fit the GP dynamics model to a dataset")
    _common(p)
    p.add_argument("--dataset", type=Path, required=True)

    p = sub.add_parser("optimize", help="optimize the shared initial policy under one prediction mode")
    _common(p)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--mode", choices=MODES, default=MODES[0])

    p = sub.add_parser("compare", help="run the four-algorithm comparison")
    _common(p)
    p.add_argument("--dataset", type=Path, help="shared dataset (generated into --out if omitted)")

    p = sub.add_parser("rollout", help="predict per-timestep cost of a policy")
    _common(p)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--policy", type=Path, required=True)
    p.add_argument("--mode", choices=MODES, default=MODES[0])
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        cfg = ex.load_config(
            args.config,
            seed=args.seed,
            algorithms=args.algorithms,
            rollouts=args.rollouts,
            episodes=getattr(args, "episodes", None),
        )
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    try:
        if args.command == "generate-data":
            path = ex.generate_data(cfg, args.out)
        elif args.command == "train-model":
            path = ex.train_model(cfg, args.dataset, args.out)
        elif args.command == "optimize":
            path = ex.optimize(cfg, args.model, args.mode, args.out)
        elif args.command == "compare":
            if args.dataset is None:
                path = ex.run_all(cfg, args.out)
            else:
                path = ex.compare(cfg, args.dataset, args.out)
            if (path / "failures.txt").exists():
                print(f"{path}: some stages failed, see failures.txt", file=sys.stderr)
                print(path)
                return 1
        elif args.command == "rollout":
            from filtered_pilco.gp import load_model
            from filtered_pilco.policy import load_policy

            model, policy = load_model(args.model), load_policy(args.policy)
            mean, sd = ex.predicted_costs(cfg, model, policy, args.mode)
            args.out.mkdir(parents=True, exist_ok=True)
            path = args.out / f"predicted_{args.mode}.csv"
            ex.write_cost_csv(path, mean, sd)
            print(f"total expected cost {float(np.sum(mean)):.4f}")
    except OSError as exc:
        print(f"error: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return 2
    except RolloutDivergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
