"""Verification suites runnable from the CLI and the tests.

The gradient check compares reverse-mode gradients against central finite
differences built purely from forward passes, so the two sides stay
independent. Probes are resampled until every ReLU pre-activation is at
least 1e-3 away from its kink, keeping the difference quotient valid.
"""

from __future__ import annotations

import numpy as np

from . import kernels, nn
from .rng import Prng

FD_STEP = 1e-5
FD_TOLERANCE = 1e-5

CHECK_ARCHITECTURES = {
    "linear": ((), "relu"),
    "relu128": ((128,), "relu"),
    "relu128x2": ((128, 128), "relu"),
    "tanh128x2": ((128, 128), "tanh"),
}


def _min_relu_preact_gap(params: nn.MlpParams, x: np.ndarray) -> float:
    """Smallest |pre-activation| over the ReLU layers, from a plain layer-
    by-layer forward walk."""
    a = x
    gap = np.inf
    for i, spec in enumerate(params.specs):
        z = params.weight(i) @ a + params.bias(i)
        if spec.activation == "relu":
            gap = min(gap, float(np.min(np.abs(z))))
            a = np.maximum(z, 0.0)
        elif spec.activation == "tanh":
            a = np.tanh(z)
        else:
            a = z
    return gap


def gradient_probe(params: nn.MlpParams, x: np.ndarray, out_grad: np.ndarray,
                   step: float = FD_STEP) -> float:
    """Max relative error between backward() and central finite differences
    of g . f(params, x) over every parameter entry."""
    out, cache = nn.forward(params, x)
    grad = nn.backward(params, cache, out_grad).flat
    args = params.kernel_args()[1:]
    X = x.reshape(1, -1)

    def objective(flat):
        o, _ = kernels.mlp_forward(flat, *args, X, 0)
        return float(np.dot(out_grad, o[0]))

    worst = 0.0
    base = params.flat
    for k in range(base.shape[0]):
        saved = base[k]
        base[k] = saved + step
        up = objective(base)
        base[k] = saved - step
        down = objective(base)
        base[k] = saved
        fd = (up - down) / (2.0 * step)
        err = abs(fd - grad[k]) / max(1.0, abs(fd))
        if err > worst:
            worst = err
    return worst


def gradient_check(n_probes: int = 10, seed: int = 11, input_dim: int = 2,
                   n_actions: int = 3, architectures=None) -> dict[str, float]:
    """Max finite-difference relative error per architecture, over
    ``n_probes`` random (params, input, output_grad) triples each."""
    architectures = architectures or CHECK_ARCHITECTURES
    rng = Prng(seed)
    results = {}
    for name, (hidden, activation) in architectures.items():
        specs = nn.mlp_specs(input_dim, n_actions, hidden, activation)
        worst = 0.0
        for _ in range(n_probes):
            while True:
                params = nn.glorot_init(specs, rng)
                x = np.array([rng.uniform_range(-2.0, 2.0) for _ in range(input_dim)])
                if _min_relu_preact_gap(params, x) >= 1e-3:
                    break
            g = np.array([rng.uniform_range(-1.0, 1.0) for _ in range(n_actions)])
            worst = max(worst, gradient_probe(params, x, g))
        results[name] = worst
    return results
