"""Command-line interface.

Subcommands: train (one run), grid (a full figure grid plus per-variant
stats), stats (aggregate run directories), phase (histogram + transition
window), field (vector field and rollouts), verify-env (dynamics
conformance), grad-check (finite-difference suite), and bench (backend
benchmark).

Every command prints its resolved configuration before doing work and, when
it has an output directory, writes the configuration there too. Identical
command lines with identical seeds produce byte-identical outputs. The
default output root is ``$DQNLAB_OUT`` (falling back to ./runs).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import __version__, analysis, bench, checks, envs, experiment, nn, reference
from .agent import EpsilonSchedule
from .errors import DqnLabError
from .rng import Prng

ENV_NAMES = {e.value: e for e in envs.EnvId}


def _out_root() -> str:
    return os.environ.get("DQNLAB_OUT", "runs")


def _echo(label: str, payload: dict) -> None:
    print(f"[dqnlab] {label}: {json.dumps(payload, sort_keys=True)}")


def _write_resolved(out_dir: str, payload: dict) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "resolved_args.json"), "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def _schedule_from_args(args) -> EpsilonSchedule:
    if args.decay_steps is not None:
        return EpsilonSchedule.linear_decay(args.decay_start, args.decay_end,
                                            args.decay_steps)
    return EpsilonSchedule.constant(args.epsilon)


def _parse_bins(text: str) -> tuple[int, int]:
    h, _, w = text.partition("x")
    return int(h), int(w or h)


def cmd_train(args) -> int:
    if args.config:
        with open(args.config) as f:
            config = experiment.config_from_dict(json.load(f))
        if args.seed is not None:
            from dataclasses import replace
            config = replace(config, seed=args.seed)
    else:
        overrides = {}
        if args.steps is not None:
            overrides["total_env_steps"] = args.steps
        if args.buffer is not None:
            overrides["buffer_capacity"] = args.buffer
        if args.snapshot_steps is not None:
            steps = tuple(int(x) for x in args.snapshot_steps.split(",") if x)
            overrides["snapshot_steps"] = steps
        hidden, activation = experiment.ARCHITECTURES[args.arch]
        config = experiment.default_config(
            ENV_NAMES[args.env], seed=args.seed if args.seed is not None else 1,
            hidden=hidden, activation=activation,
            schedule=_schedule_from_args(args),
            batch_size=args.batch, gamma=args.gamma, alpha=args.alpha,
            target_sync_period=args.sync, **overrides)
    payload = experiment.config_to_dict(config)
    payload["version"] = __version__
    _echo("train config", payload)
    log = experiment.run_training(config)
    out_dir = args.out or os.path.join(_out_root(), "train")
    experiment.save_run_log(log, out_dir)
    n_eps = len(log.episodes)
    last = float(log.episodes["ret"][-1]) if n_eps else float("nan")
    print(f"[dqnlab] wrote {out_dir}: {n_eps} episodes, last return {last}")
    return 0


def cmd_grid(args) -> int:
    grid = experiment.FIGURE_GRIDS[args.figure](
        base_seed=args.base_seed,
        **({"n_seeds": args.seeds} if args.seeds else {}),
        **({"total_steps": args.steps} if args.steps else {}))
    out_dir = args.out or os.path.join(_out_root(), f"figure{args.figure}")
    payload = {
        "figure": args.figure, "jobs": args.jobs, "out": out_dir,
        "base_seed": args.base_seed,
        "variants": {name: [grid.configs[i].seed for i in idxs]
                     for name, idxs in grid.variants.items()},
        "config0": experiment.config_to_dict(grid.configs[0]),
        "version": __version__,
    }
    _echo("grid config", payload)
    _write_resolved(out_dir, payload)
    logs = experiment.run_grid(grid.configs, parallelism=args.jobs,
                               out_root=out_dir, names=grid.names)
    for name, idxs in grid.variants.items():
        members = [logs[i] for i in idxs]
        total = max(m.config.total_env_steps for m in members)
        stats = experiment.aggregate_stats(
            members, experiment.default_eval_points(total))
        path = os.path.join(out_dir, name, "stats.csv")
        experiment.save_stats(stats, path)
        tail = float(stats.median[-1]) if len(stats.median) else float("nan")
        print(f"[dqnlab] {name}: {len(members)} runs, final median {tail} -> {path}")
    return 0


def cmd_stats(args) -> int:
    logs = [experiment.load_run_log(d) for d in args.runs]
    payload = {"runs": list(args.runs), "every": args.every, "out": args.out}
    _echo("stats config", payload)
    total = max(log.config.total_env_steps for log in logs)
    stats = experiment.aggregate_stats(
        logs, experiment.default_eval_points(total, args.every))
    experiment.save_stats(stats, args.out)
    print(f"[dqnlab] wrote {args.out} ({len(stats.steps)} points, n max {int(stats.n.max()) if len(stats.n) else 0})")
    return 0


def cmd_phase(args) -> int:
    payload = {"run": args.run, "checkpoint": args.checkpoint,
               "window": args.window, "bins": args.bins, "out": args.out}
    _echo("phase config", payload)
    log = experiment.load_run_log(args.run, load_trace=True)
    window = analysis.transition_window(log, args.checkpoint, args.window)
    upto = log.trace[log.trace["step"] <= args.checkpoint]
    hist = analysis.phase_histogram(upto, _parse_bins(args.bins))
    analysis.save_histogram_pgm(hist, args.out + "_hist.pgm")
    analysis.save_histogram_csv(hist, args.out + "_hist.csv")
    analysis.save_window_csv(window, log.config.env, args.out + "_window.csv")
    print(f"[dqnlab] wrote {args.out}_hist.pgm, {args.out}_hist.csv, "
          f"{args.out}_window.csv ({len(window)} transitions)")
    return 0


def cmd_field(args) -> int:
    payload = {"snapshot": args.snapshot, "random_init": args.random_init,
               "uncontrolled": args.uncontrolled, "grid": args.grid,
               "rollouts": args.rollouts, "max_steps": args.max_steps,
               "rollout_seed": args.rollout_seed, "out": args.out}
    _echo("field config", payload)
    if args.uncontrolled:
        params = None
    elif args.snapshot:
        params = nn.load_params(args.snapshot)
    else:
        seed = args.random_init if args.random_init is not None else 1
        params = nn.glorot_init(nn.mlp_specs(2, 3, (128, 128), "relu"), Prng(seed))
    field = analysis.vector_field(params, _parse_bins(args.grid))
    analysis.save_vector_field_csv(field, args.out + "_field.csv")
    wrote = [args.out + "_field.csv"]
    if args.rollouts:
        trajs = analysis.rollout_random_inits(params, args.rollouts,
                                              args.max_steps, Prng(args.rollout_seed))
        analysis.save_trajectories_csv(trajs, args.out + "_traj.csv")
        wrote.append(args.out + "_traj.csv")
        goals = analysis.count_goal_rollouts(trajs)
        print(f"[dqnlab] rollouts reaching the goal: {goals} of {args.rollouts}")
    print(f"[dqnlab] wrote {', '.join(wrote)} (policy: {field.policy})")
    return 0


def cmd_verify_env(args) -> int:
    payload = {"steps": args.steps, "seed": args.seed, "tolerance": 1e-9}
    _echo("verify-env config", payload)
    worst_overall = 0.0
    for env in envs.EnvId:
        worst, n = reference.conformance_check(env, args.steps, args.seed)
        status = "PASS" if worst < 1e-9 else "FAIL"
        print(f"[dqnlab] {env.value}: max deviation {worst:.3e} over {n} steps [{status}]")
        worst_overall = max(worst_overall, worst)
    if worst_overall >= 1e-9:
        print(f"[dqnlab] conformance FAILED (max {worst_overall:.3e})")
        return 1
    return 0


def cmd_grad_check(args) -> int:
    payload = {"probes": args.probes, "seed": args.seed,
               "tolerance": checks.FD_TOLERANCE}
    _echo("grad-check config", payload)
    results = checks.gradient_check(n_probes=args.probes, seed=args.seed)
    worst = max(results.values())
    for name, err in results.items():
        status = "PASS" if err < checks.FD_TOLERANCE else "FAIL"
        print(f"[dqnlab] {name}: max relative error {err:.3e} [{status}]")
    if worst >= checks.FD_TOLERANCE:
        print(f"[dqnlab] gradient check FAILED (max {worst:.3e})")
        return 1
    return 0


def cmd_bench(args) -> int:
    if args.compare:
        results = bench.compare_backends(args.train_steps)
        print(json.dumps(results, indent=2, sort_keys=True))
        return 0
    result = bench.run_workload(args.train_steps)
    if args.json:
        print(json.dumps(result, sort_keys=True))
    else:
        print(f"[dqnlab] backend {result['backend']}: "
              f"train step {result['train_step_us']:.0f} us, "
              f"env step {result['env_step_us']:.2f} us")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dqnlab",
        description="Double-DQN laboratory for classic-control tasks")
    parser.add_argument("--version", action="version", version=f"dqnlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run one training configuration")
    p.add_argument("--env", choices=sorted(ENV_NAMES), default="mountaincar")
    p.add_argument("--epsilon", type=float, default=0.0,
                   help="constant exploration rate (default 0: purely greedy)")
    p.add_argument("--decay-steps", type=int, default=None,
                   help="use a linear decay schedule over this many steps")
    p.add_argument("--decay-start", type=float, default=1.0)
    p.add_argument("--decay-end", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--steps", type=int, default=None, help="total env steps")
    p.add_argument("--arch", choices=sorted(experiment.ARCHITECTURES),
                   default="relu128x2")
    p.add_argument("--buffer", type=int, default=None)
    p.add_argument("--batch", type=int, default=experiment.DEFAULT_BATCH)
    p.add_argument("--gamma", type=float, default=experiment.DEFAULT_GAMMA)
    p.add_argument("--alpha", type=float, default=experiment.DEFAULT_ALPHA)
    p.add_argument("--sync", type=int, default=experiment.DEFAULT_SYNC)
    p.add_argument("--snapshot-steps", type=str, default=None,
                   help="comma-separated step list")
    p.add_argument("--config", type=str, default=None,
                   help="JSON config file (missing fields take defaults)")
    p.add_argument("--out", type=str, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("grid", help="reproduce a full figure grid")
    p.add_argument("--figure", type=int, choices=(1, 2, 3), required=True)
    p.add_argument("--out", type=str, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seeds", type=int, default=None, help="seeds per variant")
    p.add_argument("--steps", type=int, default=None, help="env steps per run")
    p.add_argument("--base-seed", type=int, default=1)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("stats", help="aggregate episode returns across runs")
    p.add_argument("runs", nargs="+", help="run directories")
    p.add_argument("--out", type=str, required=True)
    p.add_argument("--every", type=int, default=experiment.EVAL_EVERY)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("phase", help="phase-space histogram and window")
    p.add_argument("--run", type=str, required=True)
    p.add_argument("--checkpoint", type=int, required=True)
    p.add_argument("--window", type=int, default=1000)
    p.add_argument("--bins", type=str, default="100x100")
    p.add_argument("--out", type=str, required=True, help="output path prefix")
    p.set_defaults(func=cmd_phase)

    p = sub.add_parser("field", help="vector field of a policy")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--snapshot", type=str, default=None,
                       help="network snapshot file to use as controller")
    group.add_argument("--random-init", type=int, default=None, metavar="SEED",
                       help="fresh Glorot-initialized 2x128 network")
    group.add_argument("--uncontrolled", action="store_true",
                       help="no-push action everywhere")
    p.add_argument("--grid", type=str, default="40x40")
    p.add_argument("--rollouts", type=int, default=0)
    p.add_argument("--max-steps", type=int, default=200)
    p.add_argument("--rollout-seed", type=int, default=1)
    p.add_argument("--out", type=str, required=True, help="output path prefix")
    p.set_defaults(func=cmd_field)

    p = sub.add_parser("verify-env", help="dynamics conformance vs the reference oracle")
    p.add_argument("--steps", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=2024)
    p.set_defaults(func=cmd_verify_env)

    p = sub.add_parser("grad-check", help="finite-difference gradient suite")
    p.add_argument("--probes", type=int, default=10)
    p.add_argument("--seed", type=int, default=11)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("bench", help="kernel benchmark (numba vs numpy)")
    p.add_argument("--train-steps", type=int, default=200)
    p.add_argument("--compare", action="store_true",
                   help="run both backends in subprocesses")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DqnLabError as exc:
        print(f"[dqnlab] error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"[dqnlab] error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
