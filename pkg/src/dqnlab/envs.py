"""Deterministic classic-control tasks.

Re-implementations of the v0/v1 reference dynamics of MountainCar, CartPole
and Acrobot: seeded initial-state sampling, fixed step limits, and the
discounted-return operation. All arithmetic is 64-bit; stepping is a pure
function of (state, action), and resets with equal seeds are bit-identical.

Reward conventions (fixed per task definition): MountainCar and Acrobot pay
-1 on every step, CartPole pays +1 on every step. Episodes end on success
(MountainCar goal position, Acrobot tip height), failure (CartPole pole or
cart leaving its box), or the step limit; limit expiry is flagged separately
as a timeout so callers can decide whether to bootstrap through it.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import UsageError
from .rng import Prng


class EnvId(enum.Enum):
    MOUNTAIN_CAR = "mountaincar"
    CART_POLE = "cartpole"
    ACROBOT = "acrobot"

    @property
    def obs_dim(self) -> int:
        return {EnvId.MOUNTAIN_CAR: 2, EnvId.CART_POLE: 4, EnvId.ACROBOT: 6}[self]

    @property
    def n_actions(self) -> int:
        return {EnvId.MOUNTAIN_CAR: 3, EnvId.CART_POLE: 2, EnvId.ACROBOT: 3}[self]

    @property
    def step_limit(self) -> int:
        return {EnvId.MOUNTAIN_CAR: 200, EnvId.CART_POLE: 200, EnvId.ACROBOT: 500}[self]

    @property
    def step_reward(self) -> float:
        return 1.0 if self is EnvId.CART_POLE else -1.0


@dataclass(eq=False)
class EnvState:
    """Observation plus per-episode bookkeeping.

    ``internal`` is the physical coordinate vector the dynamics evolve. For
    MountainCar and CartPole it equals the observation; for Acrobot it is
    (theta1, theta2, omega1, omega2) while the observation is
    (cos t1, sin t1, cos t2, sin t2, omega1, omega2).
    """

    env: EnvId
    obs: np.ndarray
    internal: np.ndarray
    steps_in_episode: int = 0
    done: bool = False


@dataclass(frozen=True)
class StepResult:
    next_obs: np.ndarray
    reward: float
    done: bool
    terminal_is_timeout: bool


def acrobot_obs(internal: np.ndarray) -> np.ndarray:
    t1, t2, w1, w2 = internal
    return np.array([math.cos(t1), math.sin(t1), math.cos(t2), math.sin(t2), w1, w2])


def reset(env: EnvId, rng: Prng) -> EnvState:
    """Sample a fresh episode start.

    MountainCar: position ~ U[-0.6, -0.4], velocity 0. CartPole and Acrobot:
    each internal component ~ U[-0.1, 0.1], drawn in component order.
    """
    if env is EnvId.MOUNTAIN_CAR:
        internal = np.array([rng.uniform_range(-0.6, -0.4), 0.0])
        obs = internal.copy()
    elif env is EnvId.CART_POLE:
        internal = np.array([rng.uniform_range(-0.1, 0.1) for _ in range(4)])
        obs = internal.copy()
    else:
        internal = np.array([rng.uniform_range(-0.1, 0.1) for _ in range(4)])
        obs = acrobot_obs(internal)
    return EnvState(env, obs, internal)


def step(env: EnvId, state: EnvState, action: int) -> tuple[StepResult, EnvState]:
    """Advance one step. Returns the StepResult and the successor EnvState.

    Pure: neither input is mutated. Raises UsageError on an out-of-range
    action or when stepping an already-done state.
    """
    if state.done:
        raise UsageError("cannot step a done episode; reset first")
    if not 0 <= action < env.n_actions:
        raise UsageError(f"action {action} out of range for {env.value}")
    steps = state.steps_in_episode + 1
    at_limit = steps >= env.step_limit
    if env is EnvId.MOUNTAIN_CAR:
        p, v, success = kernels.mc_step(state.internal[0], state.internal[1], action)
        internal = np.array([p, v])
        obs = internal.copy()
        failed = False
    elif env is EnvId.CART_POLE:
        x, xd, th, thd, failed = kernels.cp_step(*state.internal, action)
        internal = np.array([x, xd, th, thd])
        obs = internal.copy()
        success = False
    else:
        t1, t2, w1, w2, success = kernels.acro_step(*state.internal, action)
        internal = np.array([t1, t2, w1, w2])
        obs = acrobot_obs(internal)
        failed = False
    terminal = bool(success or failed)
    done = terminal or at_limit
    result = StepResult(obs, env.step_reward, done, bool(at_limit and not terminal))
    return result, EnvState(env, obs, internal, steps, done)


def goal_region(env: EnvId):
    """Success predicate over observations. CartPole has no goal state
    (success is survival), so its predicate is constant false."""
    if env is EnvId.MOUNTAIN_CAR:
        return lambda obs: bool(obs[0] >= kernels.MC_GOAL_POS)
    if env is EnvId.ACROBOT:
        # -cos(t1) - cos(t1 + t2) > 1, written in terms of the trig observation.
        return lambda obs: bool(-obs[0] - (obs[0] * obs[2] - obs[1] * obs[3]) > 1.0)
    return lambda obs: False


def discounted_return(rewards, gamma: float) -> float:
    """Sum of gamma^t * r_t, evaluated by Horner's rule from the tail."""
    if not 0.0 <= gamma <= 1.0:
        raise UsageError(f"gamma must be in [0, 1], got {gamma}")
    acc = 0.0
    for r in reversed(list(rewards)):
        acc = r + gamma * acc
    return acc


# ---------------------------------------------------------------------------
# trace records (transitions.csv; see docs/formats.md)
# ---------------------------------------------------------------------------

def trace_header(env: EnvId) -> str:
    d = env.obs_dim
    cols = ["step"]
    cols += [f"obs{i}" for i in range(d)]
    cols += ["action", "reward", "done", "timeout"]
    cols += [f"next_obs{i}" for i in range(d)]
    return ",".join(cols)


def trace_dtype(env: EnvId) -> np.dtype:
    d = env.obs_dim
    return np.dtype([("step", np.int64), ("obs", np.float64, (d,)),
                     ("action", np.int64), ("reward", np.float64),
                     ("done", np.bool_), ("timeout", np.bool_),
                     ("next_obs", np.float64, (d,))])


def format_trace_row(rec) -> str:
    parts = [str(int(rec["step"]))]
    parts += [repr(float(x)) for x in rec["obs"]]
    parts += [str(int(rec["action"])), repr(float(rec["reward"])),
              str(int(rec["done"])), str(int(rec["timeout"]))]
    parts += [repr(float(x)) for x in rec["next_obs"]]
    return ",".join(parts)


def save_trace(trace: np.ndarray, env: EnvId, path) -> None:
    with open(path, "w") as f:
        f.write(trace_header(env) + "\n")
        for rec in trace:
            f.write(format_trace_row(rec) + "\n")


def load_trace(path, env: EnvId) -> np.ndarray:
    with open(path) as f:
        header = f.readline().strip()
        if header != trace_header(env):
            raise UsageError(f"{path}: unexpected trace columns for {env.value}")
        rows = [line.rstrip("\n").split(",") for line in f if line.strip()]
    d = env.obs_dim
    out = np.empty(len(rows), dtype=trace_dtype(env))
    for i, r in enumerate(rows):
        out[i]["step"] = int(r[0])
        out[i]["obs"] = [float(x) for x in r[1:1 + d]]
        out[i]["action"] = int(r[1 + d])
        out[i]["reward"] = float(r[2 + d])
        out[i]["done"] = bool(int(r[3 + d]))
        out[i]["timeout"] = bool(int(r[4 + d]))
        out[i]["next_obs"] = [float(x) for x in r[5 + d:5 + 2 * d]]
    return out
