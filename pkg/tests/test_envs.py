import math

import numpy as np
import pytest

from dqnlab import envs, reference
from dqnlab.envs import EnvId
from dqnlab.errors import UsageError
from dqnlab.rng import Prng


def test_env_dimensions():
    assert (EnvId.MOUNTAIN_CAR.obs_dim, EnvId.MOUNTAIN_CAR.n_actions) == (2, 3)
    assert (EnvId.CART_POLE.obs_dim, EnvId.CART_POLE.n_actions) == (4, 2)
    assert (EnvId.ACROBOT.obs_dim, EnvId.ACROBOT.n_actions) == (6, 3)


def test_mountain_car_reset_range():
    rng = Prng(12)
    for _ in range(200):
        s = envs.reset(EnvId.MOUNTAIN_CAR, rng)
        assert -0.6 <= s.obs[0] <= -0.4
        assert s.obs[1] == 0.0
        assert s.steps_in_episode == 0 and not s.done


def test_mountain_car_reset_mean_position():
    rng = Prng(99)
    mean = np.mean([envs.reset(EnvId.MOUNTAIN_CAR, rng).obs[0] for _ in range(10_000)])
    assert abs(mean - (-0.5)) < 0.005


@pytest.mark.parametrize("env", [EnvId.CART_POLE, EnvId.ACROBOT])
def test_small_reset_range(env):
    rng = Prng(5)
    for _ in range(200):
        s = envs.reset(env, rng)
        assert np.all(np.abs(s.internal) <= 0.1)


def test_reset_deterministic():
    a = envs.reset(EnvId.ACROBOT, Prng(31))
    b = envs.reset(EnvId.ACROBOT, Prng(31))
    assert np.array_equal(a.obs, b.obs)
    assert np.array_equal(a.internal, b.internal)


def test_mountain_car_equilibrium():
    # at p = -pi/6 the gravity term cos(3p) vanishes; no push keeps the car put
    state = envs.EnvState(EnvId.MOUNTAIN_CAR, np.array([-math.pi / 6, 0.0]),
                          np.array([-math.pi / 6, 0.0]))
    result, nxt = envs.step(EnvId.MOUNTAIN_CAR, state, 1)
    assert nxt.obs[0] == pytest.approx(-math.pi / 6, abs=1e-15)
    assert abs(nxt.obs[1]) < 1e-17
    assert not result.done


def test_mountain_car_push_right_frozen_values():
    # frozen from the reference oracle: p=-0.5, v=0, full push right
    state = envs.EnvState(EnvId.MOUNTAIN_CAR, np.array([-0.5, 0.0]),
                          np.array([-0.5, 0.0]))
    _, nxt = envs.step(EnvId.MOUNTAIN_CAR, state, 2)
    assert nxt.obs[1] == pytest.approx(0.0008231569958307428, abs=1e-18)
    assert nxt.obs[0] == pytest.approx(-0.49917684300416926, abs=1e-15)


def test_mountain_car_rewards_and_goal():
    state = envs.EnvState(EnvId.MOUNTAIN_CAR, np.array([0.45, 0.07]),
                          np.array([0.45, 0.07]))
    result, nxt = envs.step(EnvId.MOUNTAIN_CAR, state, 2)
    assert result.reward == -1.0
    assert result.done and not result.terminal_is_timeout
    assert nxt.obs[0] >= 0.5


def test_cartpole_push_right_frozen_values():
    state = envs.EnvState(EnvId.CART_POLE, np.zeros(4), np.zeros(4))
    result, nxt = envs.step(EnvId.CART_POLE, state, 1)
    assert result.reward == 1.0
    # frozen from the reference oracle
    assert nxt.obs[1] == pytest.approx(0.1951219512195122, abs=1e-16)
    assert nxt.obs[3] == pytest.approx(-0.2926829268292683, abs=1e-16)
    assert nxt.obs[1] > 0.0 and nxt.obs[3] < 0.0


def test_acrobot_hanging_equilibrium():
    state = envs.EnvState(EnvId.ACROBOT, envs.acrobot_obs(np.zeros(4)), np.zeros(4))
    result, nxt = envs.step(EnvId.ACROBOT, state, 1)
    assert np.all(np.abs(nxt.internal) < 1e-15)
    assert result.reward == -1.0 and not result.done


def test_action_validation():
    state = envs.reset(EnvId.CART_POLE, Prng(1))
    with pytest.raises(UsageError):
        envs.step(EnvId.CART_POLE, state, 2)
    with pytest.raises(UsageError):
        envs.step(EnvId.CART_POLE, state, -1)


def test_stepping_done_state_raises():
    state = envs.EnvState(EnvId.MOUNTAIN_CAR, np.array([0.5, 0.01]),
                          np.array([0.5, 0.01]), steps_in_episode=3, done=True)
    with pytest.raises(UsageError):
        envs.step(EnvId.MOUNTAIN_CAR, state, 0)


@pytest.mark.parametrize("env,limit", [(EnvId.MOUNTAIN_CAR, 200),
                                       (EnvId.CART_POLE, 200),
                                       (EnvId.ACROBOT, 500)])
def test_step_limits_flag_timeouts(env, limit):
    rng = Prng(17)
    state = envs.reset(env, rng)
    steps = 0
    while not state.done:
        # still action keeps MountainCar/Acrobot alive to the limit; CartPole
        # may fail earlier, which is a non-timeout ending
        result, state = envs.step(env, state, 1)
        steps += 1
        assert steps <= limit
    if steps == limit and env is not EnvId.CART_POLE:
        assert result.terminal_is_timeout
    assert state.steps_in_episode == steps


def test_mountain_car_bounds_hold_under_random_actions():
    rng = Prng(23)
    act = Prng(24)
    state = envs.reset(EnvId.MOUNTAIN_CAR, rng)
    for _ in range(5000):
        result, state = envs.step(EnvId.MOUNTAIN_CAR, state, act.randint(3))
        assert -1.2 <= state.obs[0] <= 0.6
        assert -0.07 <= state.obs[1] <= 0.07
        if result.done:
            state = envs.reset(EnvId.MOUNTAIN_CAR, rng)


def test_acrobot_bounds_hold_under_random_actions():
    rng = Prng(29)
    act = Prng(30)
    state = envs.reset(EnvId.ACROBOT, rng)
    for _ in range(3000):
        result, state = envs.step(EnvId.ACROBOT, state, act.randint(3))
        assert np.all(np.abs(state.obs[:4]) <= 1.0)
        assert abs(state.internal[2]) <= 4 * math.pi
        assert abs(state.internal[3]) <= 9 * math.pi
        if result.done:
            state = envs.reset(EnvId.ACROBOT, rng)


def test_goal_region():
    mc_goal = envs.goal_region(EnvId.MOUNTAIN_CAR)
    assert mc_goal(np.array([0.5, 0.0]))
    assert not mc_goal(np.array([0.49, 0.07]))
    cp_goal = envs.goal_region(EnvId.CART_POLE)
    assert not cp_goal(np.zeros(4))
    ac_goal = envs.goal_region(EnvId.ACROBOT)
    # both links straight up: theta1 = pi, theta2 = 0 -> height 2 > 1
    up = envs.acrobot_obs(np.array([math.pi, 0.0, 0.0, 0.0]))
    assert ac_goal(up)
    down = envs.acrobot_obs(np.zeros(4))
    assert not ac_goal(down)


def test_discounted_return():
    assert envs.discounted_return([-1.0, -1.0, -1.0], 0.99) == pytest.approx(-2.9701, abs=1e-12)
    assert envs.discounted_return([], 0.9) == 0.0
    assert envs.discounted_return([5.0, 100.0], 0.0) == 5.0
    with pytest.raises(UsageError):
        envs.discounted_return([1.0], 1.5)


@pytest.mark.parametrize("env", list(EnvId))
def test_conformance_short(env):
    worst, n = reference.conformance_check(env, n_steps=2000, seed=7)
    assert n == 2000
    assert worst < 1e-9


def test_trace_roundtrip(tmp_path):
    rng = Prng(3)
    act = Prng(4)
    env = EnvId.ACROBOT
    state = envs.reset(env, rng)
    rows = []
    for t in range(1, 50):
        a = act.randint(3)
        result, nxt = envs.step(env, state, a)
        rows.append((t, state.obs, a, result.reward, result.done,
                     result.terminal_is_timeout, nxt.obs))
        state = nxt if not result.done else envs.reset(env, rng)
    trace = np.empty(len(rows), dtype=envs.trace_dtype(env))
    for i, (t, obs, a, r, d, to, nobs) in enumerate(rows):
        trace[i] = (t, obs, a, r, d, to, nobs)
    path = tmp_path / "transitions.csv"
    envs.save_trace(trace, env, path)
    loaded = envs.load_trace(path, env)
    assert np.array_equal(loaded, trace)
