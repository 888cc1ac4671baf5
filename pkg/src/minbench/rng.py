"""Platform-independent pseudo-random numbers.

Every stochastic step in the harness draws from xoshiro256** (Blackman &
Vigna, 2018) whose 256-bit state is expanded from a 64-bit seed with
splitmix64. Derived quantities use fixed recipes so that a seed reproduces
the same stream on every machine:

* uniform floats: ``(x >> 11) * 2**-53``
* bounded integers: rejection sampling on ``x % n``
* normals: Box-Muller on pairs of uniforms
* permutations: Fisher-Yates, drawing from the top index down

Named sub-streams (``Rng(seed, "split", 3)``) hash their keys with BLAKE2b so
independent parts of an experiment never share draws.
"""

from __future__ import annotations

import hashlib

import numpy as np
from numba import njit, uint64

_GOLDEN = uint64(0x9E3779B97F4A7C15)
_MIX1 = uint64(0xBF58476D1CE4E5B9)
_MIX2 = uint64(0x94D049BB133111EB)
_TWO_PI = 6.283185307179586


@njit(cache=True)
def _rotl(x, k):
    return (x << uint64(k)) | (x >> uint64(64 - k))


@njit(cache=True)
def _splitmix_next(x):
    """Return ``(new_state, output)`` for one splitmix64 step."""
    x = x + _GOLDEN
    z = x
    z = (z ^ (z >> uint64(30))) * _MIX1
    z = (z ^ (z >> uint64(27))) * _MIX2
    return x, z ^ (z >> uint64(31))


@njit(cache=True)
def _seed_state(seed):
    s = np.empty(4, dtype=np.uint64)
    x = uint64(seed)
    for j in range(4):
        x, out = _splitmix_next(x)
        s[j] = out
    return s


@njit(cache=True)
def next_u64(s):
    result = _rotl(s[1] * uint64(5), 7) * uint64(9)
    t = s[1] << uint64(17)
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    return result


@njit(cache=True)
def next_float(s):
    return float(next_u64(s) >> uint64(11)) * (1.0 / 9007199254740992.0)


@njit(cache=True)
def next_below(s, n):
    """Uniform integer in ``[0, n)`` for ``n >= 1``."""
    bound = uint64(n)
    # 2**64 mod n, the size of the biased tail to reject
    threshold = (uint64(0) - bound) % bound
    while True:
        x = next_u64(s)
        if x >= threshold:
            return np.int64(x % bound)


@njit(cache=True)
def shuffle_inplace(s, arr):
    for i in range(arr.shape[0] - 1, 0, -1):
        j = next_below(s, i + 1)
        tmp = arr[i]
        arr[i] = arr[j]
        arr[j] = tmp


@njit(cache=True)
def _fill_u64(s, n):
    out = np.empty(n, dtype=np.uint64)
    for i in range(n):
        out[i] = next_u64(s)
    return out


@njit(cache=True)
def _fill_float(s, n):
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        out[i] = next_float(s)
    return out


@njit(cache=True)
def _fill_below(s, bound, n):
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        out[i] = next_below(s, bound)
    return out


@njit(cache=True)
def _fill_normal(s, n):
    out = np.empty(n, dtype=np.float64)
    i = 0
    while i < n:
        u1 = next_float(s)
        u2 = next_float(s)
        radius = np.sqrt(-2.0 * np.log(1.0 - u1))
        out[i] = radius * np.cos(_TWO_PI * u2)
        if i + 1 < n:
            out[i + 1] = radius * np.sin(_TWO_PI * u2)
        i += 2
    return out


@njit(cache=True)
def _sample(s, n, k):
    """First ``k`` entries of a partial Fisher-Yates shuffle of ``range(n)``."""
    pool = np.arange(n)
    for i in range(k):
        j = i + next_below(s, n - i)
        tmp = pool[i]
        pool[i] = pool[j]
        pool[j] = tmp
    return pool[:k].copy()


def derive_seed(seed: int, *keys) -> int:
    """Fold ``keys`` into ``seed``; returns an unsigned 64-bit integer."""
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    if not keys:
        return seed
    text = "\x1f".join(str(k) for k in keys).encode("utf-8")
    digest = hashlib.blake2b(text, digest_size=8).digest()
    return seed ^ int.from_bytes(digest, "little")


class Rng:
    """xoshiro256** stream for ``seed`` and an optional sub-stream key."""

    def __init__(self, seed: int, *keys) -> None:
        self.seed = int(seed)
        self.keys = keys
        self.state = _seed_state(np.uint64(derive_seed(seed, *keys)))

    @classmethod
    def from_state(cls, state) -> Rng:
        rng = cls.__new__(cls)
        rng.seed = None
        rng.keys = ()
        rng.state = np.asarray(state, dtype=np.uint64).copy()
        return rng

    def u64(self, n: int) -> np.ndarray:
        return _fill_u64(self.state, n)

    def random(self, n: int) -> np.ndarray:
        return _fill_float(self.state, n)

    def uniform(self, low: float, high: float, n: int) -> np.ndarray:
        return low + (high - low) * self.random(n)

    def normal(self, n: int, sd: float = 1.0, mean: float = 0.0) -> np.ndarray:
        return mean + sd * _fill_normal(self.state, n)

    def integers(self, bound: int, n: int) -> np.ndarray:
        if bound < 1:
            raise ValueError("bound must be >= 1")
        return _fill_below(self.state, bound, n)

    def permutation(self, n: int) -> np.ndarray:
        arr = np.arange(n)
        shuffle_inplace(self.state, arr)
        return arr

    def sample(self, n: int, k: int) -> np.ndarray:
        """``k`` distinct indices from ``range(n)``, in draw order."""
        if not 0 <= k <= n:
            raise ValueError(f"cannot sample {k} of {n}")
        return _sample(self.state, n, k)
