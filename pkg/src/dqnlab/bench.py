"""Backend micro-benchmark.

Times the hot kernels under the backend this process is running
(``DQNLAB_BACKEND``), and with ``compare=True`` re-runs itself in
subprocesses under both backends to report the numba-over-numpy speedup.
The workload mirrors training: fused DDQN minibatch updates on the default
two-hidden-layer network, plus raw environment stepping.
"""

from __future__ import annotations

import json
import os
import subprocess
import sys
import time

import numpy as np

from . import backend, kernels, nn
from .rng import Prng


def _timeit(fn, n: int) -> float:
    fn()  # warm-up / compile
    t0 = time.perf_counter()
    for _ in range(n):
        fn()
    return (time.perf_counter() - t0) / n


def run_workload(train_steps: int = 200, env_steps: int = 20_000) -> dict:
    """Returns microseconds per fused train step and per environment step
    under the active backend."""
    specs = nn.mlp_specs(2, 3, (128, 128), "relu")
    rng = Prng(99)
    params = nn.glorot_init(specs, rng)
    target = params.copy()
    opt = nn.AdamState.zeros(params.n_params)
    n = 256
    cap = 4096
    buf_s = np.empty((cap, 2))
    rng.fill_uniform(-1.0, 1.0, buf_s.reshape(-1))
    buf_a = np.array([rng.randint(3) for _ in range(cap)], dtype=np.int64)
    buf_r = -np.ones(cap)
    buf_s2 = np.empty((cap, 2))
    rng.fill_uniform(-1.0, 1.0, buf_s2.reshape(-1))
    buf_d = np.zeros(cap)
    state = {"t": 0}

    def train():
        _, state["t"] = kernels.train_from_buffer(
            params.flat, target.flat, *params.kernel_args()[1:],
            buf_s, buf_a, buf_r, buf_s2, buf_d, cap, n, rng.state,
            0.99, opt.m, opt.v, state["t"], 5e-4,
            nn.ADAM_BETA1, nn.ADAM_BETA2, nn.ADAM_EPS)

    def env_chunk():
        p, v = -0.5, 0.0
        for i in range(1000):
            p, v, done = kernels.mc_step(p, v, i % 3)
            if done:
                p, v = -0.5, 0.0

    train_us = _timeit(train, train_steps) * 1e6
    env_us = _timeit(env_chunk, max(1, env_steps // 1000)) * 1e6 / 1000.0
    return {"backend": backend.ACTIVE, "train_step_us": train_us,
            "env_step_us": env_us}


def _subprocess_workload(which: str, train_steps: int) -> dict:
    env = dict(os.environ, DQNLAB_BACKEND=which)
    out = subprocess.run(
        [sys.executable, "-m", "dqnlab.cli", "bench",
         "--train-steps", str(train_steps), "--json"],
        env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def compare_backends(train_steps: int = 200) -> dict:
    """Run the workload under both backends in fresh subprocesses."""
    results = {}
    for which in ("numpy", "numba"):
        try:
            results[which] = _subprocess_workload(which, train_steps)
        except (subprocess.CalledProcessError, RuntimeError) as exc:
            results[which] = {"error": str(exc)}
    if "error" not in results["numpy"] and "error" not in results["numba"]:
        results["speedup_train"] = (results["numpy"]["train_step_us"]
                                    / results["numba"]["train_step_us"])
        results["speedup_env"] = (results["numpy"]["env_step_us"]
                                  / results["numba"]["env_step_us"])
    return results
