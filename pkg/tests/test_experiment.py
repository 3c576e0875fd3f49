import json

import numpy as np
import pytest

from dqnlab import experiment
from dqnlab.agent import EpsilonSchedule
from dqnlab.envs import EnvId
from dqnlab.errors import ConfigError


def tiny_config(**kw):
    kw.setdefault("total_env_steps", 600)
    kw.setdefault("snapshot_steps", (400,))
    return experiment.default_config(EnvId.MOUNTAIN_CAR, seed=kw.pop("seed", 7), **kw)


def fake_log(episodes, total=10_000):
    """RunLog with hand-made episodes (start, length, return)."""
    cfg = experiment.default_config(EnvId.MOUNTAIN_CAR, total_env_steps=total,
                                    snapshot_steps=(), record_trace=False)
    arr = np.array(episodes, dtype=experiment.EPISODE_DTYPE)
    return experiment.RunLog(cfg, arr, None, {})


def test_defaults_match_standard_setup():
    cfg = experiment.default_config(EnvId.MOUNTAIN_CAR)
    assert cfg.buffer_capacity == 200_000
    assert cfg.batch_size == 256
    assert cfg.gamma == 0.99
    assert cfg.alpha == 5e-4
    assert cfg.target_sync_period == 1000
    assert cfg.total_env_steps == 160_000
    assert cfg.snapshot_steps == (10_000, 20_000, 40_000, 160_000)
    hidden = [s.output_dim for s in cfg.architecture[:-1]]
    assert hidden == [128, 128]
    assert all(s.activation == "relu" for s in cfg.architecture[:-1])
    assert cfg.architecture[-1].activation == "identity"
    assert cfg.schedule == EpsilonSchedule.constant(0.0)
    for env in (EnvId.CART_POLE, EnvId.ACROBOT):
        small = experiment.default_config(env)
        assert small.buffer_capacity == 50_000
        assert small.total_env_steps == 100_000
        assert small.snapshot_steps == ()


def test_config_validation():
    with pytest.raises(ConfigError):
        experiment.default_config(EnvId.MOUNTAIN_CAR, learn_start=10)
    with pytest.raises(ConfigError):
        experiment.default_config(EnvId.MOUNTAIN_CAR, gamma=1.5)
    with pytest.raises(ConfigError):
        experiment.default_config(EnvId.MOUNTAIN_CAR, total_env_steps=100,
                                  snapshot_steps=(200,))
    with pytest.raises(ConfigError):
        experiment.default_config(EnvId.CART_POLE, hidden=(8,), activation="relu",
                                  architecture=experiment.mlp_specs(2, 3, (8,)))


def test_config_json_roundtrip():
    cfg = tiny_config(schedule=EpsilonSchedule.linear_decay(1.0, 0.0, 400),
                      alpha=1e-3, hidden=(32,), activation="tanh")
    data = json.loads(json.dumps(experiment.config_to_dict(cfg)))
    assert experiment.config_from_dict(data) == cfg


def test_config_missing_fields_take_defaults():
    cfg = experiment.config_from_dict({"env": "cartpole", "seed": 5})
    assert cfg.buffer_capacity == 50_000
    assert cfg.seed == 5
    assert cfg.batch_size == 256
    with pytest.raises(ConfigError):
        experiment.config_from_dict({"env": "cartpole", "nonsense": 1})


def test_run_training_zero_steps():
    log = experiment.run_training(tiny_config(total_env_steps=0, snapshot_steps=(),
                                              record_trace=True))
    assert len(log.episodes) == 0
    assert len(log.trace) == 0
    assert log.config.total_env_steps == 0


def test_first_episode_times_out_before_learning():
    # learn_start (256) > 200, so the first episode runs under the initial
    # network and the car cannot reach the goal from rest
    log = experiment.run_training(tiny_config(total_env_steps=200, snapshot_steps=()))
    assert len(log.episodes) == 1
    assert log.episodes["ret"][0] == -200.0
    assert log.episodes["start_step"][0] == 1
    assert log.episodes["length"][0] == 200


def test_run_training_deterministic_repeat():
    cfg = tiny_config()
    a = experiment.run_training(cfg)
    b = experiment.run_training(cfg)
    assert np.array_equal(a.episodes, b.episodes)
    assert np.array_equal(a.trace, b.trace)
    assert sorted(a.snapshots) == sorted(b.snapshots)
    for k in a.snapshots:
        assert np.array_equal(a.snapshots[k].flat, b.snapshots[k].flat)


def test_episode_return_bounds():
    log = experiment.run_training(tiny_config(total_env_steps=1200))
    assert np.all(log.episodes["ret"] >= -200.0)
    assert np.all(log.episodes["ret"] <= -1.0)
    cp = experiment.run_training(experiment.default_config(
        EnvId.CART_POLE, seed=3, total_env_steps=1200))
    assert np.all(cp.episodes["ret"] >= 1.0)
    assert np.all(cp.episodes["ret"] <= 200.0)
    ac = experiment.run_training(experiment.default_config(
        EnvId.ACROBOT, seed=3, total_env_steps=1100))
    assert np.all(ac.episodes["ret"] >= -500.0)
    assert np.all(ac.episodes["ret"] <= -1.0)


def test_episode_indexing_is_contiguous():
    log = experiment.run_training(tiny_config(total_env_steps=1000))
    ends = log.episode_end_steps()
    starts = log.episodes["start_step"]
    assert starts[0] == 1
    assert np.all(starts[1:] == ends[:-1] + 1)


def test_trace_matches_episode_boundaries():
    log = experiment.run_training(tiny_config(total_env_steps=1000))
    done_steps = log.trace["step"][log.trace["done"]]
    assert np.array_equal(done_steps, log.episode_end_steps())


def test_save_load_roundtrip(tmp_path):
    cfg = tiny_config()
    log = experiment.run_training(cfg)
    experiment.save_run_log(log, tmp_path / "run")
    loaded = experiment.load_run_log(tmp_path / "run", load_trace=True,
                                     load_snapshots=True)
    assert loaded.config == cfg
    assert np.array_equal(loaded.episodes, log.episodes)
    assert np.array_equal(loaded.trace, log.trace)
    assert sorted(loaded.snapshots) == sorted(log.snapshots)
    for k in log.snapshots:
        assert np.array_equal(loaded.snapshots[k].flat, log.snapshots[k].flat)


def test_run_grid_order_and_parallel_equivalence(tmp_path):
    cfgs = [tiny_config(seed=s, total_env_steps=420, snapshot_steps=(),
                        record_trace=False) for s in (11, 22, 33)]
    seq = experiment.run_grid(cfgs, parallelism=1)
    par = experiment.run_grid(cfgs, parallelism=3)
    for a, b, cfg in zip(seq, par, cfgs):
        assert a.config == cfg and b.config == cfg
        assert np.array_equal(a.episodes, b.episodes)


def test_run_grid_writes_dirs(tmp_path):
    cfgs = [tiny_config(seed=s, total_env_steps=420) for s in (1, 2)]
    logs = experiment.run_grid(cfgs, parallelism=2, out_root=tmp_path,
                               names=["a/run00", "a/run01"])
    for name, log in zip(["a/run00", "a/run01"], logs):
        assert (tmp_path / name / "episodes.csv").exists()
        assert (tmp_path / name / "config.json").exists()
        assert log.run_dir == str(tmp_path / name)
        assert log.trace is None  # stays on disk


def test_run_grid_reports_failures_without_cancelling(monkeypatch):
    real = experiment.run_training

    def flaky(cfg):
        if cfg.seed == 22:
            raise RuntimeError("boom")
        return real(cfg)

    monkeypatch.setattr(experiment, "run_training", flaky)
    cfgs = [tiny_config(seed=s, total_env_steps=300, snapshot_steps=(),
                        record_trace=False) for s in (11, 22)]
    with pytest.raises(Exception, match="seed 22.*boom"):
        experiment.run_grid(cfgs, parallelism=2)


def test_aggregate_stats_arithmetic():
    # five runs, one completed episode each before the eval point
    logs = [fake_log([(1, 100, r)]) for r in (-200.0, -150.0, -100.0, -120.0, -180.0)]
    stats = experiment.aggregate_stats(logs, [1000])
    assert stats.median[0] == -150.0
    assert stats.mean[0] == -150.0
    assert stats.n[0] == 5
    # linear-interpolation percentile: p2 of the sorted five = -198.4
    assert stats.p2[0] == pytest.approx(-198.4, abs=1e-12)
    assert stats.p2[0] <= stats.median[0] <= stats.p98[0]


def test_aggregate_stats_identical_runs_collapse():
    logs = [fake_log([(1, 50, -60.0)]) for _ in range(4)]
    stats = experiment.aggregate_stats(logs, [100])
    assert stats.p2[0] == stats.median[0] == stats.p98[0] == stats.mean[0] == -60.0


def test_aggregate_stats_uses_latest_episode_at_or_before():
    logs = [fake_log([(1, 100, -100.0), (101, 100, -50.0)]),
            fake_log([(1, 150, -150.0)])]
    stats = experiment.aggregate_stats(logs, [100, 150, 200, 250])
    # at 100: only run 1 has finished an episode (-100)
    assert stats.steps[0] == 100 and stats.n[0] == 1 and stats.mean[0] == -100.0
    # at 150: run 1 still -100, run 2 finishes -150
    assert stats.n[1] == 2 and stats.mean[1] == -125.0
    # at 200+: run 1 updates to -50
    assert stats.mean[2] == -100.0 and stats.mean[3] == -100.0


def test_aggregate_stats_omits_points_before_any_episode():
    logs = [fake_log([(1, 100, -100.0)]), fake_log([(1, 120, -120.0)])]
    stats = experiment.aggregate_stats(logs, [50, 130])
    assert list(stats.steps) == [130]


def test_aggregate_stats_ordering_property():
    rng = np.random.default_rng(0)
    logs = []
    for _ in range(7):
        rets = rng.uniform(-200, -20, size=5)
        eps = [(1 + 100 * k, 100, float(r)) for k, r in enumerate(rets)]
        logs.append(fake_log(eps))
    stats = experiment.aggregate_stats(logs, range(100, 600, 100))
    assert np.all(stats.p2 <= stats.median)
    assert np.all(stats.median <= stats.p98)
    assert np.all(stats.mean >= stats.p2) and np.all(stats.mean <= stats.p98 + 1e-12)


def test_stats_csv_format(tmp_path):
    logs = [fake_log([(1, 100, -100.0)]), fake_log([(1, 100, -120.0)])]
    stats = experiment.aggregate_stats(logs, [100, 200])
    path = tmp_path / "stats.csv"
    experiment.save_stats(stats, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "step,mean,median,p2,p98,n"
    assert len(lines) == 3
    assert lines[1].split(",")[0] == "100"
    assert lines[1].split(",")[5] == "2"


def test_figure_grids_shape():
    g1 = experiment.figure1_grid()
    assert len(g1.configs) == 15
    assert set(g1.variants) == {"eps0", "decay25k", "decay100k"}
    assert all(c.env is EnvId.MOUNTAIN_CAR for c in g1.configs)
    g2 = experiment.figure2_grid()
    assert len(g2.configs) == 40
    assert {c.env for c in g2.configs} == {EnvId.CART_POLE, EnvId.ACROBOT}
    g3 = experiment.figure3_grid()
    assert len(g3.configs) == 20
    assert set(g3.variants) == set(experiment.ARCHITECTURES)
    linear_cfg = g3.configs[g3.variants["linear"][0]]
    assert len(linear_cfg.architecture) == 1
    assert all(c.snapshot_steps == (10_000, 20_000, 40_000, 160_000)
               for c in g3.configs)


def test_figure_grid_seeds_distinct_within_grid():
    for grid in (experiment.figure1_grid(), experiment.figure2_grid(),
                 experiment.figure3_grid()):
        seeds = [c.seed for c in grid.configs]
        assert len(seeds) == len(set(seeds))
