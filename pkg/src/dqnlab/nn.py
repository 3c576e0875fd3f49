"""Dense multilayer-perceptron engine.

Small fully-connected networks (a few hidden layers of up to a couple
hundred units) in 64-bit floats: Glorot-uniform initialization, forward
pass, exact reverse-mode gradients, and bias-corrected Adam. Parameters live
in one flat vector whose layout is shared with the snapshot file format and
the training kernels (see :mod:`dqnlab.kernels` and docs/formats.md).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, ShapeError, TrainingError
from .rng import Prng

ACTIVATIONS = {"identity": kernels.ACT_IDENTITY,
               "relu": kernels.ACT_RELU,
               "tanh": kernels.ACT_TANH}
_ACT_NAMES = {v: k for k, v in ACTIVATIONS.items()}

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

_SNAPSHOT_MAGIC = b"DQNLSNP1"


@dataclass(frozen=True)
class LayerSpec:
    """One affine layer followed by an activation."""

    input_dim: int
    output_dim: int
    activation: str = "identity"

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise ConfigError(f"layer dims must be >= 1, got {self}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")

    @property
    def n_params(self) -> int:
        return self.output_dim * (self.input_dim + 1)


def validate_specs(specs: tuple[LayerSpec, ...]) -> tuple[LayerSpec, ...]:
    specs = tuple(specs)
    if not specs:
        raise ConfigError("network needs at least one layer")
    for a, b in zip(specs, specs[1:]):
        if a.output_dim != b.input_dim:
            raise ConfigError(
                f"layer dimension mismatch: {a.output_dim} -> {b.input_dim}")
    return specs


def mlp_specs(input_dim: int, n_actions: int, hidden: tuple[int, ...],
              activation: str = "relu") -> tuple[LayerSpec, ...]:
    """Layer specs for a Q-network: hidden layers with the given activation
    and an identity output layer."""
    dims = (input_dim, *hidden, n_actions)
    return tuple(
        LayerSpec(dims[i], dims[i + 1],
                  activation if i < len(hidden) else "identity")
        for i in range(len(dims) - 1))


class _ArchArrays:
    """The five int64 arrays the kernels use to walk the flat vector."""

    __slots__ = ("in_dims", "out_dims", "acts", "w_offs", "b_offs", "n_params")

    def __init__(self, specs: tuple[LayerSpec, ...]):
        n = len(specs)
        self.in_dims = np.empty(n, dtype=np.int64)
        self.out_dims = np.empty(n, dtype=np.int64)
        self.acts = np.empty(n, dtype=np.int64)
        self.w_offs = np.empty(n, dtype=np.int64)
        self.b_offs = np.empty(n, dtype=np.int64)
        off = 0
        for i, spec in enumerate(specs):
            self.in_dims[i] = spec.input_dim
            self.out_dims[i] = spec.output_dim
            self.acts[i] = ACTIVATIONS[spec.activation]
            self.w_offs[i] = off
            off += spec.output_dim * spec.input_dim
            self.b_offs[i] = off
            off += spec.output_dim
        self.n_params = off


@dataclass(eq=False)
class MlpParams:
    """Flat parameter vector plus the layer specs that give it shape."""

    specs: tuple[LayerSpec, ...]
    flat: np.ndarray
    _arch: _ArchArrays = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.specs = validate_specs(self.specs)
        self._arch = _ArchArrays(self.specs)
        if self.flat.shape != (self._arch.n_params,):
            raise ShapeError(
                f"flat vector has {self.flat.shape}, specs need ({self._arch.n_params},)")

    @classmethod
    def zeros(cls, specs) -> "MlpParams":
        arch = _ArchArrays(validate_specs(tuple(specs)))
        return cls(tuple(specs), np.zeros(arch.n_params))

    @property
    def arch(self) -> _ArchArrays:
        return self._arch

    @property
    def n_params(self) -> int:
        return self._arch.n_params

    @property
    def n_actions(self) -> int:
        return self.specs[-1].output_dim

    @property
    def input_dim(self) -> int:
        return self.specs[0].input_dim

    def weight(self, i: int) -> np.ndarray:
        """Writable (out_dim, in_dim) view of layer i's weight matrix."""
        a = self._arch
        od, idm = int(a.out_dims[i]), int(a.in_dims[i])
        return self.flat[a.w_offs[i]:a.w_offs[i] + od * idm].reshape(od, idm)

    def bias(self, i: int) -> np.ndarray:
        a = self._arch
        return self.flat[a.b_offs[i]:a.b_offs[i] + int(a.out_dims[i])]

    def copy(self) -> "MlpParams":
        return MlpParams(self.specs, self.flat.copy())

    def kernel_args(self):
        a = self._arch
        return self.flat, a.in_dims, a.out_dims, a.acts, a.w_offs, a.b_offs


@dataclass(eq=False)
class AdamState:
    """First/second moment estimates and the step counter."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n_params: int) -> "AdamState":
        return cls(np.zeros(n_params), np.zeros(n_params), 0)

    def copy(self) -> "AdamState":
        return AdamState(self.m.copy(), self.v.copy(), self.t)


@dataclass
class GradCache:
    """Post-activations of one forward pass, consumed by backward."""

    X: np.ndarray
    data: np.ndarray
    n_rows: int


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


def glorot_init(specs, rng: Prng) -> MlpParams:
    """Glorot-uniform weights, zero biases.

    Each weight entry is drawn uniformly from [-L, L] with
    L = sqrt(6 / (fan_in + fan_out)), in flat-layout order (row-major
    weights, layer by layer); biases stay exactly 0.
    """
    params = MlpParams.zeros(tuple(specs))
    for i, spec in enumerate(params.specs):
        bound = glorot_bound(spec.input_dim, spec.output_dim)
        w = params.weight(i)
        rng.fill_uniform(-bound, bound, w.reshape(-1))
    return params


def forward(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, GradCache]:
    """Single-input forward pass. Returns the output vector and the cache
    backward needs. Pure: identical inputs give bit-identical outputs."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != params.input_dim:
        raise ShapeError(
            f"input has shape {x.shape}, network expects ({params.input_dim},)")
    X = x.reshape(1, -1)
    out, cache = kernels.mlp_forward(*params.kernel_args(), X, 1)
    return out[0], GradCache(X, cache, 1)


def forward_batch(params: MlpParams, X: np.ndarray,
                  want_cache: bool = False) -> tuple[np.ndarray, GradCache | None]:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.input_dim:
        raise ShapeError(
            f"batch has shape {X.shape}, network expects (n, {params.input_dim})")
    out, cache = kernels.mlp_forward(*params.kernel_args(), X, 1 if want_cache else 0)
    return out, (GradCache(X, cache, X.shape[0]) if want_cache else None)


def backward(params: MlpParams, cache: GradCache, output_grad: np.ndarray) -> MlpParams:
    """Gradient of output_grad . output with respect to every parameter.

    Returns the gradient in an MlpParams container with the same layout.
    output_grad may be a vector (single input) or an (n, out) matrix
    matching the cached batch.
    """
    g = np.asarray(output_grad, dtype=np.float64)
    if g.ndim == 1:
        g = g.reshape(1, -1)
    if g.shape != (cache.n_rows, params.n_actions):
        raise ShapeError(
            f"output_grad has shape {output_grad.shape}, expected "
            f"({cache.n_rows}, {params.n_actions})")
    expected_cache = cache.n_rows * int(np.sum(params.arch.out_dims))
    if cache.data.shape[0] != expected_cache:
        raise ShapeError("cache does not match network architecture")
    grad = kernels.mlp_backward(*params.kernel_args(), cache.X, cache.data,
                                np.ascontiguousarray(g))
    return MlpParams(params.specs, grad)


def adam_step(params: MlpParams, grad: MlpParams, state: AdamState, alpha: float,
              beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2,
              eps: float = ADAM_EPS) -> tuple[MlpParams, AdamState]:
    """Functional Adam update: returns new params and new state, leaving the
    inputs untouched. The training loop uses the in-place kernel with the
    same arithmetic."""
    if grad.specs != params.specs:
        raise ShapeError("gradient layout does not match parameters")
    if not np.all(np.isfinite(grad.flat)):
        raise TrainingError("non-finite gradient entry in adam_step")
    new = params.copy()
    st = state.copy()
    st.t = int(kernels.adam_update(new.flat, grad.flat, st.m, st.v, st.t,
                                   alpha, beta1, beta2, eps))
    return new, st


# ---------------------------------------------------------------------------
# snapshot file format (docs/formats.md)
# ---------------------------------------------------------------------------


def save_params(params: MlpParams, path) -> None:
    """Write a network snapshot: 8-byte magic, little-endian uint32 version
    and layer count, per-layer (in_dim, out_dim, activation) uint32 triples,
    then the flat float64 vector."""
    with open(path, "wb") as f:
        f.write(_SNAPSHOT_MAGIC)
        f.write(struct.pack("<II", 1, len(params.specs)))
        for spec in params.specs:
            f.write(struct.pack("<III", spec.input_dim, spec.output_dim,
                                ACTIVATIONS[spec.activation]))
        f.write(params.flat.astype("<f8").tobytes())


def load_params(path) -> MlpParams:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:8] != _SNAPSHOT_MAGIC:
        raise ConfigError(f"{path}: not a network snapshot")
    version, n_layers = struct.unpack_from("<II", blob, 8)
    if version != 1:
        raise ConfigError(f"{path}: unsupported snapshot version {version}")
    off = 16
    specs = []
    for _ in range(n_layers):
        idm, odm, act = struct.unpack_from("<III", blob, off)
        off += 12
        specs.append(LayerSpec(idm, odm, _ACT_NAMES[act]))
    flat = np.frombuffer(blob[off:], dtype="<f8").astype(np.float64)
    return MlpParams(tuple(specs), flat)
