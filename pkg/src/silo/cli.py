"""Command line entry point: ``silo {gen-demos,train,eval,baseline,ablate}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import envs
from .demos import generate_demos, load_demos, longest_unreachable_run, save_demos
from .evaluation import (
    BASELINE_KINDS,
    RunSummary,
    ablation_suite,
    evaluate,
    format_table,
    run_baseline,
    write_results,
)
from .exceptions import SiloError
from .trainer import TrainConfig, load_agents, load_config, resolve_demos, train

ENV_ALIASES = {"push": envs.OBSTACLE_PUSH, "pick": envs.PICK_AND_PLACE,
               envs.OBSTACLE_PUSH: envs.OBSTACLE_PUSH, envs.PICK_AND_PLACE: envs.PICK_AND_PLACE}


def env_kind(text):
    try:
        return ENV_ALIASES[text]
    except KeyError:
        raise argparse.ArgumentTypeError(f"unknown environment {text!r}; "
                                         f"choose from {sorted(ENV_ALIASES)}") from None


def add_run_flags(p):
    p.add_argument("--config", type=Path, help="INI file with a [silo] section; flags override it")
    p.add_argument("--env", type=env_kind)
    p.add_argument("--seed", type=int)
    p.add_argument("--demos", dest="demo_path", help="training demonstrations (JSONL); generated if omitted")
    p.add_argument("--eval-demos", dest="eval_demo_path", help="held-out demonstrations (JSONL)")
    p.add_argument("--n-demos", type=int, help="number of generated training demos")
    p.add_argument("--n-eval-demos", type=int, help="number of generated held-out demos")
    p.add_argument("--budget", dest="env_steps", type=int, help="environment steps to train for")
    p.add_argument("--window", dest="meta_window", type=int, help="meta window size")
    p.add_argument("--eval-interval", type=int)
    p.add_argument("--entropy", dest="entropy_coefficient", type=float, help="fixed SAC entropy coefficient")
    p.add_argument("--her", dest="her_probability", type=float, help="HER relabel probability")
    p.add_argument("--random-actions", dest="random_action_probability", type=float,
                   help="probability of a uniform random low-level action while exploring")
    p.add_argument("--reach", dest="reach_limit", type=float, help="pick-and-place reach limit |x|")
    p.add_argument("--no-obstacle", dest="obstacle", action="store_const", const=False)


RUN_FIELDS = ("env", "seed", "demo_path", "eval_demo_path", "n_demos", "n_eval_demos", "env_steps",
              "meta_window", "eval_interval", "entropy_coefficient", "her_probability",
              "random_action_probability", "reach_limit", "obstacle")


def config_from_args(args, **fixed):
    config = load_config(args.config) if getattr(args, "config", None) else TrainConfig()
    changes = {k: getattr(args, k) for k in RUN_FIELDS if getattr(args, k, None) is not None}
    changes.update(fixed)
    return config.replace(**changes)


def emit(rows, out_dir, name, stream):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_results(out_dir / name, rows)
    print(format_table(rows), file=stream)
    print(f"wrote {out_dir / name}", file=stream)


def cmd_gen_demos(args, stream):
    seeds = range(args.seed_start, args.seed_start + args.n)
    demos = generate_demos(args.env, seeds, stride=args.stride)
    save_demos(args.out, demos)
    cfg = envs.EnvConfig(args.env)
    lengths = [d.T for d in demos]
    gaps = [longest_unreachable_run(d, cfg) for d in demos]
    print(f"wrote {len(demos)} {args.env} demos to {args.out}: T in [{min(lengths)}, {max(lengths)}], "
          f"longest unreachable run {max(gaps)}", file=stream)


def cmd_train(args, stream):
    config = config_from_args(args, checkpoint_dir=str(args.out))
    if args.selector:
        config = config.replace(selector=args.selector)
    result = train(config)
    eval_demos = resolve_demos(config, train=False)
    metrics = evaluate(result.selector, result.low, config.env_config(), eval_demos, seed=config.seed)
    emit([RunSummary(config, metrics, result).row()], args.out, "results.csv", stream)


def cmd_eval(args, stream):
    config, low, selector = load_agents(args.checkpoint)
    if args.eval_demos:
        demos = load_demos(args.eval_demos, kind=config.env)
    else:
        n = args.n_eval_demos or config.n_eval_demos
        demos = resolve_demos(config.replace(n_eval_demos=n, eval_demo_path=""), train=False)
    metrics = evaluate(selector, low, config.env_config(), demos, seed=config.seed)
    row = {"env": config.env, "selector": config.selector, "seed": config.seed, "n_demos": config.n_demos,
           "window": config.meta_window, "env_steps": config.env_steps, "n_eval_demos": metrics.n_demos,
           "success_rate": metrics.success_rate, "coverage_count": metrics.coverage_count,
           "coverage_furthest": metrics.coverage_furthest, "mean_subgoals": metrics.mean_subgoals}
    emit([row], args.out, "eval.csv", stream)


def cmd_baseline(args, stream):
    base = config_from_args(args)
    rows = []
    for seed in args.seeds if args.seeds is not None else [base.seed]:
        for kind in args.kinds:
            run_dir = Path(args.out) / f"{kind}_seed{seed}"
            summary = run_baseline(kind, base.replace(seed=seed, checkpoint_dir=str(run_dir)))
            rows.append(summary.row())
            print(f"{kind} seed {seed}: {summary.metrics.summary()}", file=stream)
    emit(rows, args.out, "baselines.csv", stream)


def cmd_ablate(args, stream):
    config = config_from_args(args)
    counts, windows = ablation_suite(config, args.out, window=args.ablate_window, pick_reach=args.pick_reach)
    print(format_table(counts, row_key="n_demos"), file=stream)
    print(format_table(windows, row_key="window"), file=stream)
    print(f"wrote {Path(args.out) / 'demo_count.csv'} and {Path(args.out) / 'window.csv'}", file=stream)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="silo", description="Selective imitation from observation-only demonstrations.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-demos", help="script demonstrations and save them as JSONL")
    p.add_argument("--env", type=env_kind, default=envs.OBSTACLE_PUSH)
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--seed-start", type=int, default=0)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_gen_demos)

    p = sub.add_parser("train", help="train selector and controller, then evaluate on held-out demos")
    add_run_flags(p)
    p.add_argument("--selector", choices=BASELINE_KINDS)
    p.add_argument("--out", type=Path, required=True, help="run directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved checkpoint")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("--eval-demos")
    p.add_argument("--n-eval-demos", type=int)
    p.add_argument("--out", type=Path, default=Path("."))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("baseline", help="train and evaluate several selectors side by side")
    add_run_flags(p)
    p.add_argument("--kinds", nargs="+", choices=BASELINE_KINDS, default=list(BASELINE_KINDS))
    p.add_argument("--seeds", nargs="+", type=int)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("ablate", help="demo-count sweep and wider-window run")
    add_run_flags(p)
    p.add_argument("--ablate-window", type=int, default=10)
    p.add_argument("--pick-reach", type=float, default=0.10)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None, stream=None):
    stream = sys.stdout if stream is None else stream
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        args.func(args, stream)
    except (SiloError, FileNotFoundError) as exc:
        print(f"silo: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
