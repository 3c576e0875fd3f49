import numpy as np
import pytest

from dqnlab import agent as ag
from dqnlab import nn
from dqnlab.errors import ConfigError, UsageError
from dqnlab.replay import Transition
from dqnlab.rng import Prng


def q_net(values, input_dim=1):
    """1-layer net mapping input [1.0] to the given output row."""
    specs = (nn.LayerSpec(input_dim, len(values), "identity"),)
    params = nn.MlpParams.zeros(specs)
    params.weight(0)[:, 0] = values
    return params


def fresh_agent(n_actions=3, **kw):
    rng = Prng(1)
    return ag.Agent.fresh(nn.mlp_specs(2, n_actions, (8,), "relu"), rng, **kw)


def test_epsilon_schedule_endpoints_and_midpoint():
    sched = ag.EpsilonSchedule.linear_decay(1.0, 0.0, 25_000)
    assert ag.epsilon_at(sched, 0) == 1.0
    assert ag.epsilon_at(sched, 12_500) == 0.5
    assert ag.epsilon_at(sched, 25_000) == 0.0
    assert ag.epsilon_at(sched, 30_000) == 0.0
    const = ag.EpsilonSchedule.constant(0.25)
    assert ag.epsilon_at(const, 0) == 0.25
    assert ag.epsilon_at(const, 10**6) == 0.25


def test_epsilon_schedule_monotone():
    sched = ag.EpsilonSchedule.linear_decay(0.9, 0.05, 7777)
    values = [ag.epsilon_at(sched, s) for s in range(0, 20_000, 137)]
    assert all(a >= b for a, b in zip(values, values[1:]))
    assert all(0.0 <= v <= 1.0 for v in values)


def test_epsilon_schedule_validation():
    with pytest.raises(ConfigError):
        ag.EpsilonSchedule.constant(1.5)
    with pytest.raises(ConfigError):
        ag.EpsilonSchedule.linear_decay(0.5, 0.9, 100)
    with pytest.raises(ConfigError):
        ag.EpsilonSchedule("cosine")


def test_select_action_greedy_argmax():
    a = fresh_agent()
    a.online = q_net([-1.0, 3.0, 2.0])
    a.target = a.online.copy()
    assert ag.select_action(a, np.array([1.0]), 0.0, Prng(0)) == 1


def test_select_action_tie_breaks_low():
    a = fresh_agent()
    a.online = q_net([2.0, 2.0, 0.0])
    assert ag.select_action(a, np.array([1.0]), 0.0, Prng(0)) == 0


def test_select_action_uniform_when_epsilon_one():
    a = fresh_agent()
    rng = Prng(123)
    counts = np.zeros(3)
    n = 10_000
    for _ in range(n):
        counts[ag.select_action(a, np.array([0.1, -0.2]), 1.0, rng)] += 1
    p = 1.0 / 3.0
    sigma = np.sqrt(n * p * (1 - p))
    assert np.all(np.abs(counts - n * p) < 3 * sigma)


def test_select_action_epsilon_validation():
    with pytest.raises(UsageError):
        ag.select_action(fresh_agent(), np.array([0.0, 0.0]), 1.1, Prng(0))


def test_greedy_shift_invariance():
    a = fresh_agent()
    shifted = fresh_agent()
    shifted.online.flat[:] = a.online.flat
    shifted.online.bias(1)[:] += 123.456
    rng = Prng(9)
    for _ in range(30):
        obs = np.array([rng.uniform_range(-1, 1), rng.uniform_range(-1, 1)])
        assert (ag.select_action(a, obs, 0.0, Prng(0))
                == ag.select_action(shifted, obs, 0.0, Prng(0)))


def transition(r=-1.0, done=False, s=1.0, s2=1.0, a=0):
    return Transition(np.array([s]), a, r, np.array([s2]), done)


def test_ddqn_targets_terminal_cut():
    online = q_net([0.5, 0.9])
    target = q_net([10.0, 2.0])
    y = ag.ddqn_targets([transition(r=-1.0, done=True)], online, target, 0.99)
    assert y[0] == -1.0


def test_ddqn_targets_gamma_zero():
    online = q_net([0.5, 0.9])
    target = q_net([10.0, 2.0])
    y = ag.ddqn_targets([transition(r=3.5)], online, target, 0.0)
    assert y[0] == 3.5


def test_ddqn_targets_decoupling():
    # online prefers action 1 (0.9), target scores it 2.0 -> y = -1 + 0.99*2
    online = q_net([0.5, 0.9])
    target = q_net([10.0, 2.0])
    y = ag.ddqn_targets([transition(r=-1.0)], online, target, 0.99)
    assert y[0] == pytest.approx(0.98, abs=1e-12)


def test_ddqn_targets_empty_batch():
    with pytest.raises(UsageError):
        ag.ddqn_targets([], q_net([0.0]), q_net([0.0]), 0.99)


def test_train_step_zero_residual():
    # zero networks, terminal reward 0 -> y = 0 = Q, loss 0, params frozen
    specs = (nn.LayerSpec(1, 2, "identity"),)
    a = ag.Agent(nn.MlpParams.zeros(specs), nn.MlpParams.zeros(specs),
                 nn.AdamState.zeros(4))
    batch = [transition(r=0.0, done=True, a=i % 2) for i in range(8)]
    loss = ag.train_step(a, batch)
    assert loss == 0.0
    assert np.all(a.online.flat == 0.0)


def test_train_step_scalar_hand_check():
    # linear net Q = w*s + b from (w, b) = (0.8, 0): loss (Q-y)^2 with
    # dL/dw = 2(Q-y)s and dL/db = 2(Q-y)
    specs = (nn.LayerSpec(1, 1, "identity"),)
    w0 = 0.8
    online = nn.MlpParams(specs, np.array([w0, 0.0]))
    a = ag.Agent(online, online.copy(), nn.AdamState.zeros(2), gamma=0.99, alpha=0.05)
    s, r = 2.0, 1.5  # done transition: y = r
    batch = [Transition(np.array([s]), 0, r, np.array([s]), True)]
    loss = ag.train_step(a, batch)
    q = w0 * s
    assert loss == pytest.approx((q - r) ** 2, abs=1e-14)
    gw = 2.0 * (q - r) * s
    gb = 2.0 * (q - r)
    assert a.online.flat[0] == pytest.approx(w0 - 0.05 * gw / (abs(gw) + nn.ADAM_EPS), rel=1e-12)
    assert a.online.flat[1] == pytest.approx(-0.05 * gb / (abs(gb) + nn.ADAM_EPS), rel=1e-12)
    assert a.opt.t == 1


def test_train_step_loss_nonnegative():
    a = fresh_agent()
    rng = Prng(55)
    batch = [Transition(np.array([rng.uniform(), rng.uniform()]), rng.randint(3),
                        -1.0, np.array([rng.uniform(), rng.uniform()]), False)
             for _ in range(16)]
    for _ in range(5):
        assert ag.train_step(a, batch) >= 0.0


def test_train_step_leaves_target_alone():
    a = fresh_agent()
    before = a.target.flat.copy()
    rng = Prng(7)
    batch = [Transition(np.array([rng.uniform(), rng.uniform()]), 0, -1.0,
                        np.array([rng.uniform(), rng.uniform()]), False)
             for _ in range(8)]
    ag.train_step(a, batch)
    assert np.array_equal(a.target.flat, before)
    assert not np.array_equal(a.online.flat, before)


def test_maybe_sync_target():
    a = fresh_agent(target_sync_period=1000)
    a.online.flat[:] += 0.5
    a.env_steps = 999
    ag.maybe_sync_target(a)
    assert not np.array_equal(a.target.flat, a.online.flat)
    a.env_steps = 1000
    ag.maybe_sync_target(a)
    assert np.array_equal(a.target.flat, a.online.flat)
    # idempotent without intervening training
    snap = a.target.flat.copy()
    ag.maybe_sync_target(a)
    assert np.array_equal(a.target.flat, snap)


def test_train_step_matches_fused_buffer_kernel():
    # sampling via ReplayBuffer.sample + train_step must reproduce the fused
    # train_from_buffer kernel bit for bit when fed the same stream
    from dqnlab import kernels
    from dqnlab.replay import ReplayBuffer

    rng_fill = Prng(41)
    buf = ReplayBuffer(32, 2)
    for k in range(20):
        buf.push(Transition(
            np.array([rng_fill.uniform(), rng_fill.uniform()]), rng_fill.randint(3),
            -1.0, np.array([rng_fill.uniform(), rng_fill.uniform()]),
            rng_fill.uniform() < 0.1))

    a1 = fresh_agent()
    a2 = ag.Agent(a1.online.copy(), a1.target.copy(), a1.opt.copy(),
                  a1.gamma, a1.alpha, a1.env_steps, a1.target_sync_period)

    loss1, t1 = kernels.train_from_buffer(
        a1.online.flat, a1.target.flat, *a1.online.kernel_args()[1:],
        buf.s, buf.a, buf.r, buf.s_next, buf.done, len(buf), 8, Prng(99).state,
        a1.gamma, a1.opt.m, a1.opt.v, a1.opt.t, a1.alpha,
        nn.ADAM_BETA1, nn.ADAM_BETA2, nn.ADAM_EPS)

    batch = buf.sample(8, Prng(99))
    loss2 = ag.train_step(a2, batch)

    assert loss2 == loss1
    assert np.array_equal(a1.online.flat, a2.online.flat)
    assert np.array_equal(a1.opt.m, a2.opt.m)


def test_agent_spec_mismatch_rejected():
    rng = Prng(1)
    online = nn.glorot_init(nn.mlp_specs(2, 3, (8,)), rng)
    target = nn.glorot_init(nn.mlp_specs(2, 3, (6,)), rng)
    with pytest.raises(ConfigError):
        ag.Agent(online, target, nn.AdamState.zeros(online.n_params))


def test_checkpoint_roundtrip(tmp_path):
    a = fresh_agent(gamma=0.97, alpha=1e-3, target_sync_period=500)
    rng = Prng(13)
    batch = [Transition(np.array([rng.uniform(), rng.uniform()]), rng.randint(3),
                        -1.0, np.array([rng.uniform(), rng.uniform()]), False)
             for _ in range(8)]
    ag.train_step(a, batch)
    a.env_steps = 4321
    path = tmp_path / "agent.ckpt"
    ag.save_checkpoint(a, path)
    b = ag.load_checkpoint(path)
    assert b.online.specs == a.online.specs
    assert np.array_equal(b.online.flat, a.online.flat)
    assert np.array_equal(b.target.flat, a.target.flat)
    assert np.array_equal(b.opt.m, a.opt.m)
    assert np.array_equal(b.opt.v, a.opt.v)
    assert (b.opt.t, b.env_steps, b.gamma, b.alpha, b.target_sync_period) == \
        (a.opt.t, a.env_steps, a.gamma, a.alpha, a.target_sync_period)
