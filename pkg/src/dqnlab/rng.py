"""Self-contained 64-bit pseudo-random number generator.

Experiments must be bit-reproducible across platforms, so no platform RNG is
used anywhere in the package. The generator is splitmix64 (Steele, Lea &
Flood; the mixer behind Java's SplittableRandom), fully specified here:

    state <- state + 0x9E3779B97F4A7C15            (mod 2^64)
    z <- state
    z <- (z XOR (z >> 30)) * 0xBF58476D1CE4E5B9    (mod 2^64)
    z <- (z XOR (z >> 27)) * 0x94D049BB133111EB    (mod 2^64)
    output: z XOR (z >> 31)

Derived quantities, used everywhere draws are needed:

* uniform real in [0, 1):  ``u = (output >> 11) * 2**-53``
  (the top 53 bits scaled down, so every value is exactly representable).
* integer in [0, n):       ``int(u * n)`` for n up to a few million, where
  the float truncation bias is far below 2^-20 per draw.
* uniform real in [lo, hi): ``lo + u * (hi - lo)``.

The state is held in a one-element ``uint64`` array so the compiled and
plain-python code paths share it. Two implementations of the core step are
provided: native uint64 arithmetic for numba, and python-int arithmetic with
explicit masking for the numpy backend (numpy warns on scalar uint64
overflow). Both produce the identical stream.
"""

import numpy as np

from . import backend

_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_MASK64 = (1 << 64) - 1
_INV_2_53 = 1.1102230246251565e-16  # 2.0**-53

_U = np.uint64
_UGOLDEN = _U(_GOLDEN)
_UMIX1 = _U(_MIX1)
_UMIX2 = _U(_MIX2)


def _next_py(state):
    s = (int(state[0]) + _GOLDEN) & _MASK64
    state[0] = s
    z = ((s ^ (s >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def _uniform_py(state):
    return (_next_py(state) >> 11) * _INV_2_53


def _randint_py(state, n):
    return int(((_next_py(state) >> 11) * _INV_2_53) * n)


if backend.ACTIVE == "numba":
    from numba import njit

    @njit(cache=True, nogil=True)
    def rng_next(state):
        state[0] = state[0] + _UGOLDEN
        z = state[0]
        z = (z ^ (z >> _U(30))) * _UMIX1
        z = (z ^ (z >> _U(27))) * _UMIX2
        return z ^ (z >> _U(31))

    @njit(cache=True, nogil=True)
    def rng_uniform(state):
        return float(rng_next(state) >> _U(11)) * _INV_2_53

    @njit(cache=True, nogil=True)
    def rng_randint(state, n):
        return np.int64(rng_uniform(state) * n)

else:
    rng_next = _next_py
    rng_uniform = _uniform_py
    rng_randint = _randint_py


@backend.jit
def rng_fill_uniform(state, lo, hi, out):
    span = hi - lo
    for i in range(out.shape[0]):
        out[i] = lo + rng_uniform(state) * span


class Prng:
    """A seeded splitmix64 stream.

    One ``Prng`` instance drives one training run (resets, exploration and
    minibatch index draws all come from the same stream, in that order per
    step).
    """

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = np.array([int(seed) & _MASK64], dtype=np.uint64)

    def next_u64(self) -> int:
        return int(rng_next(self.state))

    def uniform(self) -> float:
        """Uniform real in [0, 1)."""
        return float(rng_uniform(self.state))

    def uniform_range(self, lo: float, hi: float) -> float:
        return lo + self.uniform() * (hi - lo)

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        return int(rng_randint(self.state, n))

    def fill_uniform(self, lo: float, hi: float, out: np.ndarray) -> np.ndarray:
        rng_fill_uniform(self.state, lo, hi, out)
        return out

    def clone(self) -> "Prng":
        other = Prng(0)
        other.state[0] = self.state[0]
        return other


def derive_seed(base_seed: int, index: int) -> int:
    """Per-run seed for run ``index`` of a grid with base seed ``base_seed``.

    Defined as the ``(index + 1)``-th output of a splitmix64 stream seeded
    with ``base_seed``. splitmix64 is a bijection of its state sequence, so
    distinct indices always yield distinct seeds.
    """
    if index < 0:
        raise ValueError("index must be non-negative")
    state = [int(base_seed) & _MASK64]
    out = 0
    for _ in range(index + 1):
        out = _next_py(state)
    return out
