"""Command line entry point: train, eval, sweep and demo subcommands.

Every run writes its artifacts under one output directory together with a
manifest.json recording the resolved configuration, seeds, timestamps and
artifact paths. Exit codes: 0 success, 1 runtime failure, 2 configuration
error (the message names the offending field).
"""
from __future__ import annotations

import argparse
import copy
import datetime
import json
import os
import sys
import uuid

import numpy as np

from .config import ARRANGEMENTS, RunConfig, load_chain, run_config_from_tree, run_config_to_tree
from .configfile import ConfigError, apply_overrides, load_config_file
from .env import ForwarderEnv
from .evaluation import (
    BoundMeanPolicy,
    ScriptedOracle,
    evaluate_success_rate,
    run_curriculum_sweep,
)
from .ppo import load_agent, train


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def build_config(args) -> RunConfig:
    tree = load_config_file(args.config) if args.config else {}
    tree = apply_overrides(tree, args.set or [])
    return run_config_from_tree(tree)


def write_manifest(out_dir, command, cfg: RunConfig, args, artifacts):
    manifest = {
        "run_id": uuid.uuid4().hex,
        "command": command,
        "created_at": _now(),
        "config": run_config_to_tree(cfg),
        "overrides": list(args.set or []),
        "seeds": {"env_seed": cfg.env.seed},
        "artifacts": artifacts,
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return path


def _make_policy_factory(args, chain):
    if getattr(args, "oracle", False):
        return lambda env: ScriptedOracle(env.chain, env.config,
                                          env.config.num_envs)
    if not args.checkpoint:
        raise ConfigError("either --checkpoint or --oracle is required")
    policy, _, normalizer, _ = load_agent(args.checkpoint)
    return lambda env: BoundMeanPolicy(policy, normalizer, env)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = build_config(args)
    chain = load_chain(cfg)
    cfg.validate(chain)
    os.makedirs(args.out, exist_ok=True)

    def log_row(row):
        if "stage_transition" in row:
            print(f"epoch {row['epoch']}: stage -> {row['stage_transition']}")
        elif not args.quiet:
            print(f"epoch {row['epoch']} stage {row['stage']} "
                  f"return {row['mean_return']:.3f} "
                  f"success {row['success_rate']:.2f}")

    result = train(cfg, out_dir=args.out, chain=chain, log_fn=log_row)
    write_manifest(args.out, "train", cfg, args, {
        "metrics": "metrics.csv",
        "final_checkpoint": "final.ckpt",
        "best_checkpoint": "best.ckpt",
        "last_checkpoint": "last.ckpt",
    })
    if result.failed:
        print(f"training halted: {result.failure}", file=sys.stderr)
        return 1
    return 0


def cmd_eval(args) -> int:
    cfg = build_config(args)
    chain = load_chain(cfg)
    cfg.validate(chain)
    make_policy = _make_policy_factory(args, chain)
    os.makedirs(args.out, exist_ok=True)
    report = evaluate_success_rate(make_policy, chain, cfg.env, cfg.reward,
                                   args.trials, base_seed=args.base_seed)
    with open(os.path.join(args.out, "report.json"), "w") as fh:
        fh.write(report.to_json())
    write_manifest(args.out, "eval", cfg, args, {"report": "report.json"})
    print(f"success rate {report.success_rate:.4f} "
          f"({report.successes}/{report.trials})")
    for kind, count in report.failures.items():
        if count:
            print(f"  {kind}: {count}")
    return 0


def cmd_sweep(args) -> int:
    cfg = build_config(args)
    chain = load_chain(cfg)
    cfg.validate(chain)
    arrangements = args.arrangements.split(",")
    for a in arrangements:
        if a not in ARRANGEMENTS:
            raise ConfigError(f"unknown arrangement {a!r} in --arrangements")
    weights = [float(w) for w in args.weights.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")]
    os.makedirs(args.out, exist_ok=True)
    result = run_curriculum_sweep(cfg, arrangements, weights, seeds,
                                  total_epochs=args.epochs,
                                  eval_trials=args.trials)
    with open(os.path.join(args.out, "sweep.json"), "w") as fh:
        fh.write(result.to_json())
    with open(os.path.join(args.out, "heatmap.csv"), "w") as fh:
        fh.write(result.heatmap_csv())
    write_manifest(args.out, "sweep", cfg, args,
                   {"sweep": "sweep.json", "heatmap": "heatmap.csv"})
    print(result.heatmap_csv(), end="")
    return 0


def cmd_demo(args) -> int:
    cfg = build_config(args)
    cfg.env.num_envs = 1
    if args.seed is not None:
        cfg.env.seed = args.seed
    chain = load_chain(cfg)
    cfg.validate(chain)
    make_policy = _make_policy_factory(args, chain)
    os.makedirs(args.out, exist_ok=True)

    env = ForwarderEnv(chain, cfg.env, cfg.reward)
    policy = make_policy(env)
    steps = args.steps or cfg.env.episode_length
    path = os.path.join(args.out, "demo.jsonl")
    with open(path, "w") as fh:
        for t in range(steps):
            action = policy(env.state)
            res = env.step(action, auto_reset=False)
            st = env.state
            record = {
                "t": t,
                "q": st.q[0].tolist(),
                "targets": st.targets[0].tolist(),
                "log_pos": st.log_pos[0].tolist(),
                "gb_pos": st.poses.p_gb[0].tolist(),
                "r1": float(res.reward_terms.r1[0]),
                "r2": float(res.reward_terms.r2[0]),
                "r3": float(res.reward_terms.r3[0]),
                "attached": bool(st.attached[0]),
                "success": bool(res.success[0]),
            }
            fh.write(json.dumps(record) + "\n")
            if res.done[0]:
                break
    write_manifest(args.out, "demo", cfg, args, {"trajectory": "demo.jsonl"})
    print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_common(p):
    p.add_argument("--config", help="key-value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config entry (dotted key)")
    p.add_argument("--out", required=True, help="run output directory")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="forwarder-rl",
        description="Train and evaluate log-loading crane controllers.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run curriculum PPO training")
    _add_common(p)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a policy over fresh episodes")
    _add_common(p)
    p.add_argument("--checkpoint", help="agent checkpoint to evaluate")
    p.add_argument("--oracle", action="store_true",
                   help="evaluate the scripted oracle controller instead")
    p.add_argument("--trials", type=int, default=256)
    p.add_argument("--base-seed", type=int, default=10_000)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("sweep", help="curriculum arrangement / weight sweep")
    _add_common(p)
    p.add_argument("--arrangements", default=",".join(ARRANGEMENTS))
    p.add_argument("--weights", default="1,5,10")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--epochs", type=int, default=60,
                   help="total training epochs per cell")
    p.add_argument("--trials", type=int, default=32,
                   help="evaluation episodes per cell")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("demo", help="record one scripted or policy episode")
    _add_common(p)
    p.add_argument("--checkpoint", help="agent checkpoint to run")
    p.add_argument("--oracle", action="store_true",
                   help="run the scripted oracle controller")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_demo)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
