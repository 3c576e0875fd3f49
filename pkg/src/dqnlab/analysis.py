"""Diagnostics over recorded runs: transition windows around checkpoints,
phase-space visit histograms, vector fields of a Q-network acting as a
controller (or of the uncontrolled system), and greedy rollouts from random
initial states.

Everything here is a pure function of RunLog data or network parameters, so
every figure is replayable from the files a run leaves on disk. Phase-space
operations are specific to MountainCar, whose state box is
[-1.2, 0.6] x [-0.07, 0.07].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import envs, kernels, nn
from .errors import AnalysisError, UsageError
from .experiment import RunLog
from .rng import Prng

MC_STATE_BOUNDS = ((kernels.MC_MIN_POS, kernels.MC_MAX_POS),
                   (-kernels.MC_MAX_SPEED, kernels.MC_MAX_SPEED))
HIST_BINS = (100, 100)
HIST_CLAMP = 100
FIELD_GRID = (40, 40)
UNCONTROLLED_ACTION = 1  # the only MountainCar action with no applied force


@dataclass(eq=False)
class PhaseHistogram:
    """Visit counts over the MountainCar state box.

    grid[i, j] counts visits with velocity in bin i (i = 0 is the lowest
    velocity) and position in bin j (j = 0 is the leftmost position).
    ``clamp`` is the render ceiling: cells at or above it render white.
    """

    grid: np.ndarray
    bounds: tuple = MC_STATE_BOUNDS
    clamp: int = HIST_CLAMP


@dataclass(eq=False)
class VectorField:
    """One-step state deltas under a fixed policy on a regular grid."""

    points: np.ndarray   # (n, 2) of (position, velocity)
    deltas: np.ndarray   # (n, 2) of (dp, dv)
    policy: str          # "greedy" or "uncontrolled"


def transition_window(log: RunLog, checkpoint: int, n: int) -> np.ndarray:
    """The n transitions with step indices in (checkpoint - n, checkpoint],
    in step order. The log must carry a trace covering that range."""
    if n < 1:
        raise UsageError("window size must be positive")
    if log.trace is None:
        raise AnalysisError("run log has no transition trace")
    lo = checkpoint - n
    if lo < 0:
        raise AnalysisError(
            f"window ({lo}, {checkpoint}] precedes the start of the trace")
    steps = log.trace["step"]
    first, last = int(steps[0]), int(steps[-1])
    if lo + 1 < first or checkpoint > last:
        raise AnalysisError(
            f"trace covers [{first}, {last}], window needs ({lo}, {checkpoint}]")
    mask = (steps > lo) & (steps <= checkpoint)
    return log.trace[mask]


def phase_histogram(trace: np.ndarray, bins: tuple[int, int] = HIST_BINS) -> PhaseHistogram:
    """Bin the visited states (each transition's origin) of a MountainCar
    trace into an H x W grid over the state box."""
    h, w = bins
    if h < 1 or w < 1:
        raise UsageError("bins must be positive")
    grid = np.zeros((h, w), dtype=np.int64)
    (p_lo, p_hi), (v_lo, v_hi) = MC_STATE_BOUNDS
    if len(trace):
        obs = trace["obs"]
        if obs.shape[1] != 2:
            raise AnalysisError("phase histograms need MountainCar traces")
        p = obs[:, 0]
        v = obs[:, 1]
        if p.min() < p_lo or p.max() > p_hi or v.min() < v_lo or v.max() > v_hi:
            raise AnalysisError("observation outside the MountainCar state box")
        pi = np.minimum((np.floor((p - p_lo) / (p_hi - p_lo) * w)).astype(np.int64), w - 1)
        vi = np.minimum((np.floor((v - v_lo) / (v_hi - v_lo) * h)).astype(np.int64), h - 1)
        np.add.at(grid, (vi, pi), 1)
    return PhaseHistogram(grid)


def _policy_action(params: nn.MlpParams | None, obs: np.ndarray) -> int:
    if params is None:
        return UNCONTROLLED_ACTION
    return int(kernels.greedy_action(*params.kernel_args(), obs))


def vector_field(params: nn.MlpParams | None,
                 grid: tuple[int, int] = FIELD_GRID) -> VectorField:
    """One-step deltas on an evenly spaced grid over the MountainCar box.

    With ``params`` the action at each grid state is the network argmax
    (greedy controller); with ``params=None`` it is the no-push action
    (uncontrolled system). Deltas inherit the dynamics' clamps, so no arrow
    leaves the box.
    """
    h, w = grid
    if h < 2 or w < 2:
        raise UsageError("vector-field grid must be at least 2x2")
    (p_lo, p_hi), (v_lo, v_hi) = MC_STATE_BOUNDS
    ps = np.linspace(p_lo, p_hi, w)
    vs = np.linspace(v_lo, v_hi, h)
    points = np.empty((h * w, 2))
    deltas = np.empty((h * w, 2))
    k = 0
    for v in vs:
        for p in ps:
            obs = np.array([p, v])
            a = _policy_action(params, obs)
            p2, v2, _ = kernels.mc_step(p, v, a)
            points[k] = (p, v)
            deltas[k] = (p2 - p, v2 - v)
            k += 1
    return VectorField(points, deltas, "uncontrolled" if params is None else "greedy")


def rollout_random_inits(params: nn.MlpParams | None, n_trajectories: int,
                         max_steps: int, rng: Prng) -> list[np.ndarray]:
    """Greedy rollouts from fresh MountainCar resets.

    Returns one (length, 2) state array per trajectory, including the
    initial state; a trajectory stops at the goal, or after max_steps."""
    trajectories = []
    for _ in range(n_trajectories):
        state = envs.reset(envs.EnvId.MOUNTAIN_CAR, rng)
        path = [state.obs.copy()]
        for _ in range(max_steps):
            a = _policy_action(params, state.obs)
            p2, v2, at_goal = kernels.mc_step(state.internal[0], state.internal[1], a)
            obs = np.array([p2, v2])
            path.append(obs)
            state = envs.EnvState(envs.EnvId.MOUNTAIN_CAR, obs, obs,
                                  state.steps_in_episode + 1, bool(at_goal))
            if at_goal:
                break
        trajectories.append(np.array(path))
    return trajectories


def count_goal_rollouts(trajectories: list[np.ndarray]) -> int:
    goal = envs.goal_region(envs.EnvId.MOUNTAIN_CAR)
    return sum(1 for t in trajectories if goal(t[-1]))


def first_goal_step(log: RunLog) -> int | None:
    """Earliest step whose transition lands in the goal region, or None."""
    if log.trace is None:
        raise AnalysisError("run log has no transition trace")
    goal = envs.goal_region(log.config.env)
    hits = np.array([goal(rec) for rec in log.trace["next_obs"]])
    if not hits.any():
        return None
    return int(log.trace["step"][np.argmax(hits)])


# ---------------------------------------------------------------------------
# exports (PGM image and CSVs; see docs/formats.md)
# ---------------------------------------------------------------------------


def save_histogram_pgm(hist: PhaseHistogram, path) -> None:
    """P2 (text) portable graymap, maxval 255. Cell count c maps to
    round(255 * min(c, clamp) / clamp); row 0 of the image is the highest
    velocity bin."""
    grid = hist.grid
    h, w = grid.shape
    levels = np.rint(255.0 * np.minimum(grid, hist.clamp) / hist.clamp).astype(int)
    with open(path, "w") as f:
        f.write("P2\n")
        f.write(f"{w} {h}\n255\n")
        for row in levels[::-1]:
            f.write(" ".join(str(int(x)) for x in row) + "\n")


def save_histogram_csv(hist: PhaseHistogram, path) -> None:
    """Raw counts, one row per velocity bin (bin 0 first), comma-separated
    position bins."""
    with open(path, "w") as f:
        for row in hist.grid:
            f.write(",".join(str(int(x)) for x in row) + "\n")


def save_vector_field_csv(field: VectorField, path) -> None:
    with open(path, "w") as f:
        f.write("p,v,dp,dv\n")
        for (p, v), (dp, dv) in zip(field.points, field.deltas):
            f.write(f"{repr(float(p))},{repr(float(v))},{repr(float(dp))},{repr(float(dv))}\n")


def save_trajectories_csv(trajectories: list[np.ndarray], path) -> None:
    with open(path, "w") as f:
        f.write("traj_id,t,p,v\n")
        for tid, traj in enumerate(trajectories):
            for t, (p, v) in enumerate(traj):
                f.write(f"{tid},{t},{repr(float(p))},{repr(float(v))}\n")


def save_window_csv(window: np.ndarray, env: envs.EnvId, path) -> None:
    envs.save_trace(window, env, path)
