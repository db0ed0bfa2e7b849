"""Command-line entry point.

Subcommands: pretrain, train (a3c|dqn|a3cl), eval, sweep, trace.
Exit codes: 0 success, 1 usage, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import replace

from . import agents, harness, predict
from .config import CostWeights, SimParams, load_config, make_rng
from .env import OffloadEnv, OraclePredictors

TRACE_COLUMNS = ["slot", "decisions", "action", "task_id", "completed", "handover",
                 "time_slots", "energy", "rent", "scalar_cost", "deadline_overrun",
                 "overflow_mb", "bracket", "reward", "queue_mb", "battery"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dtoffload",
                     description="Digital-twin assisted offloading simulator")
    parser.add_argument("--config", default=None, help="key = value config file")
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--out-dir", default="out")
    parser.add_argument("--workers", type=int, default=8)
    parser.add_argument("--deterministic", action="store_true",
                        help="single-worker fully serialized execution")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", parents=[], help="pretrain the twin's predictors")
    p.add_argument("--slots", type=int, default=harness.DESK["pretrain_slots"])
    p.add_argument("--epochs", type=int, default=harness.DESK["pretrain_epochs"])

    t = sub.add_parser("train", help="train a policy")
    t.add_argument("algo", choices=["a3c", "dqn", "a3cl"])
    t.add_argument("--steps", type=int, default=harness.DESK["i_max"],
                   help="global decision budget I_max")
    t.add_argument("--mode", choices=["dynamic", "static"], default="dynamic")
    t.add_argument("--episode-decisions", type=int,
                   default=harness.DESK["episode_decisions"])
    t.add_argument("--predictors", default=None,
                   help="predictor checkpoint dir (default: <out-dir>/checkpoints/"
                        "predictors if present, else oracle)")
    t.add_argument("--lr", type=float, default=None,
                   help="learning rate for all nets (default: Table-1 1e-5)")
    t.add_argument("--entropy-phi-end", type=float, default=None,
                   help="linear anneal target for the entropy weight")

    e = sub.add_parser("eval", help="evaluate one policy on the default scenario")
    e.add_argument("--policy", required=True, choices=list(agents.POLICY_NAMES))
    e.add_argument("--mode", choices=["dynamic", "static"], default="static")
    e.add_argument("--episodes", type=int, default=3)
    e.add_argument("--max-slots", type=int, default=2000)
    e.add_argument("--checkpoints", default=None)
    e.add_argument("--trace-file", default=None,
                   help="also write the per-step trace CSV")

    s = sub.add_parser("sweep", help="run a figure-family experiment")
    s.add_argument("--experiment", required=True, choices=sorted(harness.EXPERIMENTS))
    s.add_argument("--checkpoints", default=None)
    s.add_argument("--seeds", type=int, default=None)
    s.add_argument("--episodes", type=int, default=None)

    tr = sub.add_parser("trace", help="per-step debug trace of one episode")
    tr.add_argument("--policy", default="AM", choices=list(agents.POLICY_NAMES))
    tr.add_argument("--mode", choices=["dynamic", "static"], default="dynamic")
    tr.add_argument("--max-slots", type=int, default=500)
    tr.add_argument("--checkpoints", default=None)
    tr.add_argument("--out-file", default=None, help="defaults to <out-dir>/trace.csv")
    return parser


def _load(args) -> tuple[SimParams, CostWeights]:
    if args.config:
        return load_config(args.config)
    return SimParams(), CostWeights()


def _policy_for(name, params, checkpoints):
    if name in agents.BASELINES:
        return agents.baseline_policy(name), "full"
    if checkpoints is None:
        raise FileNotFoundError(f"policy {name} requires --checkpoints")
    suffix = "dynamic"
    return agents.load_policy(
        os.path.join(checkpoints, harness.checkpoint_name(name, suffix)), params)


def cmd_pretrain(args, params, weights) -> int:
    pred_dir = harness.ensure_predictors(args.out_dir, params, weights, args.seed,
                                         args.slots, args.epochs, progress=print)
    print(f"predictors written to {pred_dir}")
    with open(os.path.join(pred_dir, "accuracy.csv"), encoding="utf-8") as fh:
        print(fh.read().strip())
    return 0


def cmd_train(args, params, weights) -> int:
    kind = args.algo.upper()
    lr_kw = {}
    if args.lr is not None:
        lr_kw = dict(lr_actor=args.lr, lr_critic=args.lr, lr_q=args.lr)
    cfg = agents.TrainConfig(seed=args.seed, workers=args.workers,
                             i_max=args.steps,
                             episode_decisions=args.episode_decisions,
                             deterministic=args.deterministic,
                             entropy_phi_end=args.entropy_phi_end, **lr_kw)
    predictors = None
    pred_dir = args.predictors or os.path.join(args.out_dir, "checkpoints", "predictors")
    if kind in ("A3C", "DQN") and os.path.isdir(pred_dir):
        predictors = predict.TrainedPredictors.load_dir(pred_dir)
    suffix = args.mode if args.mode == "static" else "dynamic"
    run_params = replace(params, vehicle_speed_mps=0.0) if args.mode == "static" else params
    ckpt = harness.ensure_training(args.out_dir, kind, suffix, run_params, weights,
                                   cfg, predictors=predictors, progress=print)
    print(f"checkpoint at {ckpt}")
    return 0


def cmd_eval(args, params, weights) -> int:
    spec = harness.ExperimentSpec(
        name=f"eval_{args.policy.lower()}", mode=args.mode, swept="none",
        grid=("default",), policies=(args.policy,), seeds=3,
        episodes_per_cell=args.episodes,
        max_slots=args.max_slots if args.mode == "dynamic" else None,
        checkpoint_suffix="static" if args.mode == "static" else "dynamic",
    )
    row = harness.evaluate_cell(args.policy, spec, "default", params, weights,
                                seed_idx=0, base_seed=1000 + args.seed,
                                checkpoints_dir=args.checkpoints)
    print(",".join(harness.METRIC_COLUMNS))
    print(",".join(str(v) for v in row.to_csv_row()))
    if args.trace_file:
        _run_trace(args.policy, args.mode, args.max_slots, args.checkpoints,
                   params, weights, args.seed, args.trace_file)
        print(f"trace written to {args.trace_file}")
    return 0


def _run_trace(policy_name, mode, max_slots, checkpoints, params, weights, seed, path):
    policy_fn, obs_mode = _policy_for(policy_name, params, checkpoints)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        rows = []

        def sink(info):
            rows.append([info.get(c, "") for c in TRACE_COLUMNS])

        env = OffloadEnv(params, weights, seed=seed, mode=mode, obs_mode=obs_mode,
                         predictors=OraclePredictors(), max_slots=max_slots,
                         trace_writer=None)
        rng = make_rng(seed, 99)
        obs = env.reset()
        done = env._done
        while not done:
            a = policy_fn(obs, rng)
            obs, r, done, info = env.step(a)
            info = dict(info)
            info["reward"] = r
            sink(info)
        writer.writerows(rows)


def cmd_sweep(args, params, weights) -> int:
    spec = harness.EXPERIMENTS[args.experiment]
    if args.seeds is not None:
        spec = replace(spec, seeds=args.seeds)
    if args.episodes is not None:
        spec = replace(spec, episodes_per_cell=args.episodes)
    checkpoints = args.checkpoints or os.path.join(args.out_dir, "checkpoints")
    exp_dir = harness.run_experiment(spec, params, weights, args.out_dir,
                                     checkpoints, base_seed=1000 + args.seed,
                                     progress=print)
    print(f"experiment rows and summary in {exp_dir}")
    return 0


def cmd_trace(args, params, weights) -> int:
    out_file = args.out_file or os.path.join(args.out_dir, "trace.csv")
    _run_trace(args.policy, args.mode, args.max_slots, args.checkpoints,
               params, weights, args.seed, out_file)
    print(f"trace written to {out_file}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        params, weights = _load(args)
        if args.command == "pretrain":
            return cmd_pretrain(args, params, weights)
        if args.command == "train":
            return cmd_train(args, params, weights)
        if args.command == "eval":
            return cmd_eval(args, params, weights)
        if args.command == "sweep":
            return cmd_sweep(args, params, weights)
        if args.command == "trace":
            return cmd_trace(args, params, weights)
        parser.error(f"unknown command {args.command!r}")
    except SystemExit:
        raise
    except Exception as exc:  # runtime failure contract: exit code 2
        sys.stderr.write(f"dtoffload: error: {exc}\n")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
