"""Double-DQN learner.

The behavior policy is greedy or epsilon-greedy with linear decay. Targets
decouple selection from evaluation: the online network picks the bootstrap
action at s', the periodically-synchronized target network scores it.
Terminal transitions cut the bootstrap; the squared loss is averaged over
the minibatch and its gradient flows only through Q(s, a) of the online
network.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import kernels, nn
from .errors import ConfigError, TrainingError, UsageError
from .replay import Transition
from .rng import Prng

_CHECKPOINT_MAGIC = b"DQNLCKP1"


@dataclass(frozen=True)
class EpsilonSchedule:
    """Exploration rate as a function of completed environment steps.

    kind "constant": always ``value``. kind "linear_decay": starts at
    ``start`` and moves linearly to ``end`` over ``decay_steps`` steps,
    clamped at ``end`` afterwards.
    """

    kind: str = "constant"
    value: float = 0.0
    start: float = 1.0
    end: float = 0.0
    decay_steps: int = 1

    def __post_init__(self):
        if self.kind not in ("constant", "linear_decay"):
            raise ConfigError(f"unknown schedule kind {self.kind!r}")
        for x in (self.value, self.start, self.end):
            if not 0.0 <= x <= 1.0:
                raise ConfigError("epsilon values must be in [0, 1]")
        if self.kind == "linear_decay":
            if self.decay_steps < 1:
                raise ConfigError("decay_steps must be positive")
            if self.end > self.start:
                raise ConfigError("linear_decay must be non-increasing")

    @classmethod
    def constant(cls, value: float) -> "EpsilonSchedule":
        return cls("constant", value=value)

    @classmethod
    def linear_decay(cls, start: float, end: float, decay_steps: int) -> "EpsilonSchedule":
        return cls("linear_decay", start=start, end=end, decay_steps=decay_steps)


def epsilon_at(schedule: EpsilonSchedule, step: int) -> float:
    """Exploration rate after ``step`` completed environment steps."""
    if schedule.kind == "constant":
        return schedule.value
    frac = (schedule.end - schedule.start) * step / schedule.decay_steps
    return max(schedule.end, schedule.start + frac)


@dataclass(eq=False)
class Agent:
    """Online/target parameter pair plus optimizer and step bookkeeping."""

    online: nn.MlpParams
    target: nn.MlpParams
    opt: nn.AdamState
    gamma: float = 0.99
    alpha: float = 5e-4
    env_steps: int = 0
    target_sync_period: int = 1000

    def __post_init__(self):
        if self.online.specs != self.target.specs:
            raise ConfigError("online and target must share layer specs")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must be in [0, 1]")

    @classmethod
    def fresh(cls, specs, rng: Prng, gamma: float = 0.99, alpha: float = 5e-4,
              target_sync_period: int = 1000) -> "Agent":
        """Glorot-initialized online network, target starting as its copy."""
        online = nn.glorot_init(specs, rng)
        return cls(online, online.copy(), nn.AdamState.zeros(online.n_params),
                   gamma, alpha, 0, target_sync_period)


def select_action(agent: Agent, obs: np.ndarray, epsilon: float, rng: Prng) -> int:
    """Epsilon-greedy over the online network; argmax ties break to the
    lowest action index. One uniform draw is consumed per call (plus one
    randint when the random branch fires)."""
    if not 0.0 <= epsilon <= 1.0:
        raise UsageError(f"epsilon must be in [0, 1], got {epsilon}")
    obs = np.ascontiguousarray(obs, dtype=np.float64)
    return int(kernels.select_action(*agent.online.kernel_args(), obs, epsilon,
                                     rng.state))


def _batch_arrays(batch: list[Transition]):
    n = len(batch)
    d = batch[0].s.shape[0]
    S = np.empty((n, d))
    A = np.empty(n, dtype=np.int64)
    R = np.empty(n)
    S2 = np.empty((n, d))
    D = np.empty(n)
    for i, t in enumerate(batch):
        S[i] = t.s
        A[i] = t.a
        R[i] = t.r
        S2[i] = t.s_next
        D[i] = 1.0 if t.done else 0.0
    return S, A, R, S2, D


def ddqn_targets(batch: list[Transition], online: nn.MlpParams,
                 target: nn.MlpParams, gamma: float) -> np.ndarray:
    """Per-transition regression targets: r for terminals, else
    r + gamma * Q_target(s', argmax_a Q_online(s', a))."""
    if not batch:
        raise UsageError("batch must be non-empty")
    S, A, R, S2, D = _batch_arrays(batch)
    y = kernels.ddqn_targets_batch(online.flat, target.flat,
                                   *online.kernel_args()[1:], S2, R, D, gamma)
    if not np.all(np.isfinite(y)):
        raise TrainingError("non-finite network output in target computation")
    return y


def train_step(agent: Agent, batch: list[Transition]) -> float:
    """One minibatch update of the online network; returns the pre-update
    mean squared error."""
    if not batch:
        raise UsageError("batch must be non-empty")
    S, A, R, S2, D = _batch_arrays(batch)
    loss, t = kernels.train_on_batch(
        agent.online.flat, agent.target.flat, *agent.online.kernel_args()[1:],
        S, A, R, S2, D, agent.gamma, agent.opt.m, agent.opt.v, agent.opt.t,
        agent.alpha, nn.ADAM_BETA1, nn.ADAM_BETA2, nn.ADAM_EPS)
    agent.opt.t = int(t)
    if not np.isfinite(loss):
        raise TrainingError(f"non-finite loss at optimizer step {agent.opt.t}")
    return float(loss)


def maybe_sync_target(agent: Agent) -> Agent:
    """Copy online into target when env_steps is a positive multiple of the
    sync period. Idempotent between training updates."""
    if agent.env_steps > 0 and agent.env_steps % agent.target_sync_period == 0:
        agent.target.flat[:] = agent.online.flat
    return agent


# ---------------------------------------------------------------------------
# checkpoints: both networks, optimizer state and the step counter
# ---------------------------------------------------------------------------


def save_checkpoint(agent: Agent, path) -> None:
    with open(path, "wb") as f:
        f.write(_CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", 1, len(agent.online.specs)))
        for spec in agent.online.specs:
            f.write(struct.pack("<III", spec.input_dim, spec.output_dim,
                                nn.ACTIVATIONS[spec.activation]))
        f.write(struct.pack("<ddqq", agent.gamma, agent.alpha,
                            agent.opt.t, agent.env_steps))
        f.write(struct.pack("<q", agent.target_sync_period))
        for arr in (agent.online.flat, agent.target.flat, agent.opt.m, agent.opt.v):
            f.write(arr.astype("<f8").tobytes())


def load_checkpoint(path) -> Agent:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:8] != _CHECKPOINT_MAGIC:
        raise ConfigError(f"{path}: not an agent checkpoint")
    version, n_layers = struct.unpack_from("<II", blob, 8)
    if version != 1:
        raise ConfigError(f"{path}: unsupported checkpoint version {version}")
    off = 16
    specs = []
    for _ in range(n_layers):
        idm, odm, act = struct.unpack_from("<III", blob, off)
        off += 12
        specs.append(nn.LayerSpec(idm, odm, nn._ACT_NAMES[act]))
    gamma, alpha, t, env_steps = struct.unpack_from("<ddqq", blob, off)
    off += 32
    (sync_period,) = struct.unpack_from("<q", blob, off)
    off += 8
    n = nn.MlpParams.zeros(tuple(specs)).n_params
    arrays = []
    for _ in range(4):
        arrays.append(np.frombuffer(blob, dtype="<f8", count=n, offset=off).astype(np.float64))
        off += 8 * n
    online = nn.MlpParams(tuple(specs), arrays[0])
    target = nn.MlpParams(tuple(specs), arrays[1])
    opt = nn.AdamState(arrays[2], arrays[3], int(t))
    return Agent(online, target, opt, gamma, alpha, int(env_steps), int(sync_period))
