"""Experiment configuration, the training loop, multi-seed grids, and
reward-statistics aggregation.

A run is fully determined by its TrainConfig (including the seed): repeating
it produces a bit-identical RunLog. Grids execute runs through a bounded
worker pool; results are independent of worker count and arrive in input
order.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import __version__, envs, kernels, nn
from .agent import EpsilonSchedule, epsilon_at
from .errors import ConfigError, TrainingError
from .nn import LayerSpec, MlpParams, mlp_specs
from .rng import Prng, derive_seed

DEFAULT_GAMMA = 0.99
DEFAULT_ALPHA = 5e-4
DEFAULT_BATCH = 256
DEFAULT_SYNC = 1000
DEFAULT_HIDDEN = (128, 128)
MC_BUFFER = 200_000
SMALL_BUFFER = 50_000
MC_TOTAL_STEPS = 160_000
SMALL_TOTAL_STEPS = 100_000
MC_SNAPSHOT_STEPS = (10_000, 20_000, 40_000, 160_000)
EVAL_EVERY = 1000


@dataclass(frozen=True)
class TrainConfig:
    """Everything one training run depends on.

    Defaults (per environment) reproduce the standard setup: two 128-unit
    ReLU hidden layers, batch 256, gamma 0.99, Adam alpha 5e-4, target sync
    every 1000 steps, replay capacity 200k for MountainCar and 50k for
    CartPole/Acrobot, purely greedy behavior (epsilon constant 0).
    """

    env: envs.EnvId
    architecture: tuple[LayerSpec, ...]
    schedule: EpsilonSchedule
    total_env_steps: int
    buffer_capacity: int
    batch_size: int
    gamma: float
    alpha: float
    target_sync_period: int
    seed: int
    learn_start: int
    snapshot_steps: tuple[int, ...]
    timeout_bootstrap: bool
    record_trace: bool

    def __post_init__(self):
        nn.validate_specs(self.architecture)
        if self.architecture[0].input_dim != self.env.obs_dim:
            raise ConfigError(
                f"first layer expects {self.architecture[0].input_dim} inputs, "
                f"{self.env.value} has {self.env.obs_dim}")
        if self.architecture[-1].output_dim != self.env.n_actions:
            raise ConfigError(
                f"last layer has {self.architecture[-1].output_dim} outputs, "
                f"{self.env.value} has {self.env.n_actions} actions")
        if self.architecture[-1].activation != "identity":
            raise ConfigError("Q-network output layer must be identity")
        if self.total_env_steps < 0:
            raise ConfigError("total_env_steps must be >= 0")
        for name in ("buffer_capacity", "batch_size", "target_sync_period", "learn_start"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.learn_start < self.batch_size:
            raise ConfigError("learn_start must be >= batch_size")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must be in [0, 1]")
        if any(s < 1 or s > self.total_env_steps for s in self.snapshot_steps):
            raise ConfigError("snapshot_steps must lie in [1, total_env_steps]")


def default_config(env: envs.EnvId, *, seed: int = 1,
                   hidden: tuple[int, ...] = DEFAULT_HIDDEN,
                   activation: str = "relu",
                   schedule: EpsilonSchedule | None = None,
                   **overrides) -> TrainConfig:
    """The per-environment default configuration, with keyword overrides."""
    mountain = env is envs.EnvId.MOUNTAIN_CAR
    total = overrides.pop("total_env_steps",
                          MC_TOTAL_STEPS if mountain else SMALL_TOTAL_STEPS)
    snapshots = overrides.pop(
        "snapshot_steps",
        tuple(s for s in MC_SNAPSHOT_STEPS if s <= total) if mountain else ())
    base = dict(
        env=env,
        architecture=mlp_specs(env.obs_dim, env.n_actions, hidden, activation),
        schedule=schedule or EpsilonSchedule.constant(0.0),
        total_env_steps=total,
        buffer_capacity=MC_BUFFER if mountain else SMALL_BUFFER,
        batch_size=DEFAULT_BATCH,
        gamma=DEFAULT_GAMMA,
        alpha=DEFAULT_ALPHA,
        target_sync_period=DEFAULT_SYNC,
        seed=seed,
        learn_start=DEFAULT_BATCH,
        snapshot_steps=tuple(snapshots),
        timeout_bootstrap=True,
    )
    base["record_trace"] = overrides.pop("record_trace", bool(base["snapshot_steps"]))
    base.update(overrides)
    return TrainConfig(**base)


# ---------------------------------------------------------------------------
# config <-> JSON (config.json; missing fields take the defaults above)
# ---------------------------------------------------------------------------


def config_to_dict(config: TrainConfig) -> dict:
    return {
        "env": config.env.value,
        "architecture": [
            {"input_dim": s.input_dim, "output_dim": s.output_dim,
             "activation": s.activation}
            for s in config.architecture],
        "schedule": (
            {"kind": "constant", "value": config.schedule.value}
            if config.schedule.kind == "constant" else
            {"kind": "linear_decay", "start": config.schedule.start,
             "end": config.schedule.end, "decay_steps": config.schedule.decay_steps}),
        "total_env_steps": config.total_env_steps,
        "buffer_capacity": config.buffer_capacity,
        "batch_size": config.batch_size,
        "gamma": config.gamma,
        "alpha": config.alpha,
        "target_sync_period": config.target_sync_period,
        "seed": config.seed,
        "learn_start": config.learn_start,
        "snapshot_steps": list(config.snapshot_steps),
        "timeout_bootstrap": config.timeout_bootstrap,
        "record_trace": config.record_trace,
    }


def config_from_dict(data: dict) -> TrainConfig:
    data = dict(data)
    data.pop("version", None)
    env = envs.EnvId(data.pop("env", "mountaincar"))
    overrides = {}
    if "architecture" in data:
        overrides["architecture"] = tuple(
            LayerSpec(s["input_dim"], s["output_dim"], s["activation"])
            for s in data.pop("architecture"))
    if "schedule" in data:
        s = data.pop("schedule")
        if s.get("kind") == "linear_decay":
            overrides["schedule"] = EpsilonSchedule.linear_decay(
                s["start"], s["end"], s["decay_steps"])
        else:
            overrides["schedule"] = EpsilonSchedule.constant(s.get("value", 0.0))
    if "snapshot_steps" in data:
        overrides["snapshot_steps"] = tuple(data.pop("snapshot_steps"))
    known = {"total_env_steps", "buffer_capacity", "batch_size", "gamma", "alpha",
             "target_sync_period", "seed", "learn_start", "timeout_bootstrap",
             "record_trace"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    overrides.update(data)
    return default_config(env, **overrides)


# ---------------------------------------------------------------------------
# run log
# ---------------------------------------------------------------------------

EPISODE_DTYPE = np.dtype([("start_step", np.int64), ("length", np.int64),
                          ("ret", np.float64)])


@dataclass(eq=False)
class RunLog:
    """Everything one run produced: completed episodes, the transition
    trace (when recorded), network snapshots, and the config echo."""

    config: TrainConfig
    episodes: np.ndarray
    trace: np.ndarray | None
    snapshots: dict[int, MlpParams]
    version: str = __version__
    run_dir: str | None = None

    def episode_end_steps(self) -> np.ndarray:
        return self.episodes["start_step"] + self.episodes["length"] - 1


def run_training(config: TrainConfig) -> RunLog:
    """Execute one run: act, store, (after learn_start) sample and train,
    and sync the target network every target_sync_period steps.

    Steps are numbered 1..total_env_steps. A snapshot at step s captures the
    online parameters after step s's update and sync.
    """
    rng = Prng(config.seed)
    env = config.env
    d = env.obs_dim
    specs = config.architecture
    online = nn.glorot_init(specs, rng)
    target = online.copy()
    opt = nn.AdamState.zeros(online.n_params)
    opt_t = 0
    flat_on, in_dims, out_dims, acts, w_offs, b_offs = online.kernel_args()
    flat_tg = target.flat

    cap = config.buffer_capacity
    buf_s = np.empty((cap, d))
    buf_a = np.empty(cap, dtype=np.int64)
    buf_r = np.empty(cap)
    buf_s2 = np.empty((cap, d))
    buf_d = np.empty(cap)

    total = config.total_env_steps
    record = config.record_trace
    if record:
        tr_obs = np.empty((total, d))
        tr_act = np.empty(total, dtype=np.int64)
        tr_rew = np.empty(total)
        tr_done = np.zeros(total, dtype=bool)
        tr_tout = np.zeros(total, dtype=bool)
        tr_next = np.empty((total, d))

    episodes: list[tuple[int, int, float]] = []
    snapshots: dict[int, MlpParams] = {}
    snapshot_at = set(config.snapshot_steps)

    sched = config.schedule
    const_eps = sched.value if sched.kind == "constant" else None
    gamma = config.gamma
    alpha = config.alpha
    batch = config.batch_size
    learn_start = config.learn_start
    sync_period = config.target_sync_period
    boot_timeout = config.timeout_bootstrap
    step_reward = env.step_reward
    limit = env.step_limit
    mc = env is envs.EnvId.MOUNTAIN_CAR
    cp = env is envs.EnvId.CART_POLE
    k_select = kernels.select_action
    k_train = kernels.train_from_buffer
    rng_state = rng.state

    state = envs.reset(env, rng)
    obs = state.obs
    internal = state.internal
    ep_start = 1
    ep_return = 0.0
    ep_len = 0

    for t in range(1, total + 1):
        eps = const_eps if const_eps is not None else epsilon_at(sched, t - 1)
        a = int(k_select(flat_on, in_dims, out_dims, acts, w_offs, b_offs,
                         obs, eps, rng_state))
        if mc:
            p, v, success = kernels.mc_step(internal[0], internal[1], a)
            internal = np.array([p, v])
            next_obs = internal
            terminal = success
        elif cp:
            x, xd, th, thd, failed = kernels.cp_step(
                internal[0], internal[1], internal[2], internal[3], a)
            internal = np.array([x, xd, th, thd])
            next_obs = internal
            terminal = failed
        else:
            t1, t2, w1, w2, success = kernels.acro_step(
                internal[0], internal[1], internal[2], internal[3], a)
            internal = np.array([t1, t2, w1, w2])
            next_obs = envs.acrobot_obs(internal)
            terminal = success
        ep_len += 1
        timeout = ep_len >= limit and not terminal
        done = terminal or timeout
        stored_done = terminal if boot_timeout else done

        i = (t - 1) % cap
        buf_s[i] = obs
        buf_a[i] = a
        buf_r[i] = step_reward
        buf_s2[i] = next_obs
        buf_d[i] = 1.0 if stored_done else 0.0

        if record:
            j = t - 1
            tr_obs[j] = obs
            tr_act[j] = a
            tr_rew[j] = step_reward
            tr_done[j] = done
            tr_tout[j] = timeout
            tr_next[j] = next_obs

        ep_return += step_reward
        if done:
            episodes.append((ep_start, ep_len, ep_return))
            state = envs.reset(env, rng)
            obs = state.obs
            internal = state.internal
            ep_start = t + 1
            ep_return = 0.0
            ep_len = 0
        else:
            obs = next_obs

        if t >= learn_start:
            size = t if t < cap else cap
            loss, opt_t = k_train(flat_on, flat_tg, in_dims, out_dims, acts,
                                  w_offs, b_offs, buf_s, buf_a, buf_r, buf_s2,
                                  buf_d, size, batch, rng_state, gamma,
                                  opt.m, opt.v, opt_t, alpha,
                                  nn.ADAM_BETA1, nn.ADAM_BETA2, nn.ADAM_EPS)
            if not math.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss (seed {config.seed}, step {t})")
        if t % sync_period == 0:
            flat_tg[:] = flat_on
        if t in snapshot_at:
            snapshots[t] = online.copy()

    opt.t = opt_t
    ep_arr = np.array(episodes, dtype=EPISODE_DTYPE) if episodes else \
        np.empty(0, dtype=EPISODE_DTYPE)
    trace = None
    if record:
        trace = np.empty(total, dtype=envs.trace_dtype(env))
        trace["step"] = np.arange(1, total + 1)
        trace["obs"] = tr_obs
        trace["action"] = tr_act
        trace["reward"] = tr_rew
        trace["done"] = tr_done
        trace["timeout"] = tr_tout
        trace["next_obs"] = tr_next
    return RunLog(config, ep_arr, trace, snapshots)


# ---------------------------------------------------------------------------
# on-disk layout: one directory per run (see docs/formats.md)
# ---------------------------------------------------------------------------


def save_run_log(log: RunLog, run_dir) -> str:
    os.makedirs(run_dir, exist_ok=True)
    payload = config_to_dict(log.config)
    payload["version"] = log.version
    with open(os.path.join(run_dir, "config.json"), "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    with open(os.path.join(run_dir, "episodes.csv"), "w") as f:
        f.write("start_step,length,return\n")
        for rec in log.episodes:
            f.write(f"{int(rec['start_step'])},{int(rec['length'])},{repr(float(rec['ret']))}\n")
    if log.trace is not None:
        envs.save_trace(log.trace, log.config.env, os.path.join(run_dir, "transitions.csv"))
    for step, params in sorted(log.snapshots.items()):
        nn.save_params(params, os.path.join(run_dir, f"snapshot_{step}.bin"))
    log.run_dir = str(run_dir)
    return str(run_dir)


def load_run_log(run_dir, load_trace: bool = False,
                 load_snapshots: bool = False) -> RunLog:
    with open(os.path.join(run_dir, "config.json")) as f:
        payload = json.load(f)
    version = payload.pop("version", "unknown")
    config = config_from_dict(payload)
    episodes = []
    with open(os.path.join(run_dir, "episodes.csv")) as f:
        f.readline()
        for line in f:
            if line.strip():
                s, l, r = line.split(",")
                episodes.append((int(s), int(l), float(r)))
    ep_arr = np.array(episodes, dtype=EPISODE_DTYPE) if episodes else \
        np.empty(0, dtype=EPISODE_DTYPE)
    trace = None
    trace_path = os.path.join(run_dir, "transitions.csv")
    if load_trace and os.path.exists(trace_path):
        trace = envs.load_trace(trace_path, config.env)
    snapshots = {}
    if load_snapshots:
        for name in sorted(os.listdir(run_dir)):
            if name.startswith("snapshot_") and name.endswith(".bin"):
                step = int(name[len("snapshot_"):-len(".bin")])
                snapshots[step] = nn.load_params(os.path.join(run_dir, name))
    return RunLog(config, ep_arr, trace, snapshots, version, str(run_dir))


def run_grid(configs, parallelism: int = 1, out_root=None,
             names=None) -> list[RunLog]:
    """Run every config, up to ``parallelism`` at a time. Output order
    matches input order and is independent of parallelism.

    With ``out_root`` set, each run is written to ``out_root/<name>`` as it
    finishes and the returned logs carry episodes plus ``run_dir`` only
    (trace and snapshots stay on disk). A failed run does not cancel its
    siblings; failures are re-raised together at the end.
    """
    configs = list(configs)
    if names is None:
        names = [f"run{i:03d}" for i in range(len(configs))]
    if len(names) != len(configs):
        raise ConfigError("names must match configs")
    if parallelism < 1:
        raise ConfigError("parallelism must be positive")

    def one(idx: int) -> RunLog:
        log = run_training(configs[idx])
        if out_root is not None:
            run_dir = os.path.join(out_root, names[idx])
            save_run_log(log, run_dir)
            return RunLog(log.config, log.episodes, None, {}, log.version, run_dir)
        return log

    results: list[RunLog | None] = [None] * len(configs)
    failures: list[str] = []
    if parallelism == 1:
        for i in range(len(configs)):
            try:
                results[i] = one(i)
            except Exception as exc:  # noqa: BLE001 - reported per run below
                failures.append(f"run {i} (seed {configs[i].seed}): {exc}")
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            futures = {pool.submit(one, i): i for i in range(len(configs))}
            for fut, i in futures.items():
                try:
                    results[i] = fut.result()
                except Exception as exc:  # noqa: BLE001
                    failures.append(f"run {i} (seed {configs[i].seed}): {exc}")
    if failures:
        raise TrainingError("; ".join(failures))
    return results  # type: ignore[return-value]


# ---------------------------------------------------------------------------
# reward statistics across seeds
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class RewardStats:
    """Across-run episode-return statistics sampled at fixed step points.

    At each point every run contributes its most recent completed-episode
    return at or before that step; points where no run has completed an
    episode yet are omitted. Percentiles use linear interpolation between
    order statistics: at quantile q the value is taken at fractional rank
    q * (n - 1) of the sorted sample.
    """

    steps: np.ndarray
    mean: np.ndarray
    median: np.ndarray
    p2: np.ndarray
    p98: np.ndarray
    n: np.ndarray


def aggregate_stats(logs: list[RunLog], eval_points) -> RewardStats:
    if len(logs) < 2:
        raise ConfigError("aggregate_stats needs at least 2 runs")
    eval_points = np.asarray(list(eval_points), dtype=np.int64)
    ends = [log.episode_end_steps() for log in logs]
    rets = [log.episodes["ret"] for log in logs]
    steps, mean, median, p2, p98, n_at = [], [], [], [], [], []
    for point in eval_points:
        vals = []
        for end, ret in zip(ends, rets):
            k = int(np.searchsorted(end, point, side="right")) - 1
            if k >= 0:
                vals.append(float(ret[k]))
        if not vals:
            continue
        v = np.array(vals)
        steps.append(int(point))
        mean.append(float(np.mean(v)))
        median.append(float(np.percentile(v, 50)))
        p2.append(float(np.percentile(v, 2)))
        p98.append(float(np.percentile(v, 98)))
        n_at.append(len(vals))
    return RewardStats(np.array(steps, dtype=np.int64), np.array(mean),
                       np.array(median), np.array(p2), np.array(p98),
                       np.array(n_at, dtype=np.int64))


def save_stats(stats: RewardStats, path) -> None:
    with open(path, "w") as f:
        f.write("step,mean,median,p2,p98,n\n")
        for i in range(stats.steps.shape[0]):
            f.write(f"{int(stats.steps[i])},{repr(float(stats.mean[i]))},"
                    f"{repr(float(stats.median[i]))},{repr(float(stats.p2[i]))},"
                    f"{repr(float(stats.p98[i]))},{int(stats.n[i])}\n")


def default_eval_points(total_steps: int, every: int = EVAL_EVERY):
    return range(every, total_steps + 1, every)


# ---------------------------------------------------------------------------
# the standard experiment grids behind `dqnlab grid --figure N`
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    """A named set of runs grouped into variants for aggregation."""

    configs: tuple[TrainConfig, ...]
    names: tuple[str, ...]
    variants: dict[str, tuple[int, ...]]


def _grid(env_variants, base_seed: int) -> GridSpec:
    configs: list[TrainConfig] = []
    names: list[str] = []
    variants: dict[str, tuple[int, ...]] = {}
    idx = 0
    for variant_name, n_seeds, make in env_variants:
        members = []
        for k in range(n_seeds):
            configs.append(make(seed=derive_seed(base_seed, idx)))
            names.append(f"{variant_name}/run{k:02d}")
            members.append(idx)
            idx += 1
        variants[variant_name] = tuple(members)
    return GridSpec(tuple(configs), tuple(names), variants)


def figure1_grid(base_seed: int = 1, n_seeds: int = 5,
                 total_steps: int = MC_TOTAL_STEPS) -> GridSpec:
    """MountainCar: greedy vs epsilon decayed over 25k and over 100k steps."""
    mk = envs.EnvId.MOUNTAIN_CAR
    def make(schedule):
        return lambda seed: default_config(mk, seed=seed, schedule=schedule,
                                           total_env_steps=total_steps)
    return _grid([
        ("eps0", n_seeds, make(EpsilonSchedule.constant(0.0))),
        ("decay25k", n_seeds, make(EpsilonSchedule.linear_decay(1.0, 0.0, 25_000))),
        ("decay100k", n_seeds, make(EpsilonSchedule.linear_decay(1.0, 0.0, 100_000))),
    ], base_seed)


def figure2_grid(base_seed: int = 1, n_seeds: int = 10,
                 total_steps: int = SMALL_TOTAL_STEPS) -> GridSpec:
    """CartPole and Acrobot: greedy vs epsilon decayed over 10k steps."""
    rows = []
    for env in (envs.EnvId.CART_POLE, envs.EnvId.ACROBOT):
        for sched_name, sched in (
                ("eps0", EpsilonSchedule.constant(0.0)),
                ("decay10k", EpsilonSchedule.linear_decay(1.0, 0.0, 10_000))):
            def make(seed, env=env, sched=sched):
                return default_config(env, seed=seed, schedule=sched,
                                      total_env_steps=total_steps)
            rows.append((f"{env.value}_{sched_name}", n_seeds, make))
    return _grid(rows, base_seed)


ARCHITECTURES = {
    "linear": ((), "relu"),
    "relu128": ((128,), "relu"),
    "relu128x2": ((128, 128), "relu"),
    "tanh128x2": ((128, 128), "tanh"),
}


def figure3_grid(base_seed: int = 1, n_seeds: int = 5,
                 total_steps: int = MC_TOTAL_STEPS) -> GridSpec:
    """MountainCar architecture ablation, all greedy, with snapshots for the
    phase-space diagnostics."""
    mk = envs.EnvId.MOUNTAIN_CAR
    rows = []
    for arch_name, (hidden, activation) in ARCHITECTURES.items():
        def make(seed, hidden=hidden, activation=activation):
            return default_config(mk, seed=seed, hidden=hidden,
                                  activation=activation,
                                  total_env_steps=total_steps)
        rows.append((arch_name, n_seeds, make))
    return _grid(rows, base_seed)


FIGURE_GRIDS = {1: figure1_grid, 2: figure2_grid, 3: figure3_grid}
