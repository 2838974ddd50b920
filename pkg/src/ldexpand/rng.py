"""Counter-based random numbers (Philox4x32-10).

Every draw is a pure function of ``(key, counter)``.  Simulations address
counters by ``(path index, step, sub-step, purpose)``, so a path's random
inputs do not depend on batching, chunk order or the number of workers.
"""
from __future__ import annotations

import numpy as np
from scipy.special import ndtri

try:  # numba is optional at runtime; the numpy kernel gives identical bits
    import numba
except ImportError:  # pragma: no cover
    numba = None

_M0 = 0xD2511F53
_M1 = 0xCD9E8D57
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
_MASK = 0xFFFFFFFF

# purposes (fourth counter word)
EVENT = 1
NORMAL = 2
LIMIT = 3
START = 4


def philox_numpy(c0, c1, c2, c3, k0, k1):
    """Philox4x32-10 on uint32 arrays, pure numpy.  Returns a (4, n) array."""
    c0 = np.asarray(c0, dtype=np.uint64)
    c1 = np.asarray(c1, dtype=np.uint64)
    c2 = np.asarray(c2, dtype=np.uint64)
    c3 = np.asarray(c3, dtype=np.uint64)
    k0 = int(k0) & _MASK
    k1 = int(k1) & _MASK
    m0 = np.uint64(_M0)
    m1 = np.uint64(_M1)
    mask = np.uint64(_MASK)
    s32 = np.uint64(32)
    for r in range(10):
        if r:
            k0 = (k0 + _W0) & _MASK
            k1 = (k1 + _W1) & _MASK
        p0 = m0 * c0
        p1 = m1 * c2
        n0 = (p1 >> s32) ^ c1 ^ np.uint64(k0)
        n2 = (p0 >> s32) ^ c3 ^ np.uint64(k1)
        c1 = p1 & mask
        c3 = p0 & mask
        c0, c2 = n0, n2
    return np.stack([c0, c1, c2, c3]).astype(np.uint32)


if numba is not None:

    @numba.njit(cache=True)
    def _philox_kernel(c0, c1, c2, c3, k0, k1, out):  # pragma: no cover - jitted
        n = c0.shape[0]
        for i in range(n):
            x0 = np.uint64(c0[i])
            x1 = np.uint64(c1[i])
            x2 = np.uint64(c2[i])
            x3 = np.uint64(c3[i])
            a = np.uint64(k0)
            b = np.uint64(k1)
            for r in range(10):
                if r > 0:
                    a = (a + np.uint64(_W0)) & np.uint64(_MASK)
                    b = (b + np.uint64(_W1)) & np.uint64(_MASK)
                p0 = np.uint64(_M0) * x0
                p1 = np.uint64(_M1) * x2
                y0 = (p1 >> np.uint64(32)) ^ x1 ^ a
                y2 = (p0 >> np.uint64(32)) ^ x3 ^ b
                x1 = p1 & np.uint64(_MASK)
                x3 = p0 & np.uint64(_MASK)
                x0 = y0
                x2 = y2
            out[0, i] = x0
            out[1, i] = x1
            out[2, i] = x2
            out[3, i] = x3


def philox(c0, c1, c2, c3, k0, k1):
    """Philox4x32-10 with broadcasting of the four counter words."""
    c0, c1, c2, c3 = np.broadcast_arrays(*(np.asarray(c, dtype=np.uint64) for c in (c0, c1, c2, c3)))
    shape = c0.shape
    if numba is None:
        out = philox_numpy(c0.ravel(), c1.ravel(), c2.ravel(), c3.ravel(), k0, k1)
    else:
        flat = [np.ascontiguousarray(c.ravel()) for c in (c0, c1, c2, c3)]
        out = np.empty((4, flat[0].size), dtype=np.uint32)
        _philox_kernel(*flat, np.uint64(int(k0) & _MASK), np.uint64(int(k1) & _MASK), out)
    return out.reshape((4,) + shape)


def to_unit53(hi, lo):
    """Two 32-bit words to a double in [0, 1) with 53 random bits."""
    a = (hi.astype(np.uint64) >> np.uint64(5)).astype(np.float64)
    b = (lo.astype(np.uint64) >> np.uint64(6)).astype(np.float64)
    return (a * 67108864.0 + b) * (1.0 / 9007199254740992.0)


def to_unit32(w):
    """One 32-bit word to a double in (0, 1)."""
    return (w.astype(np.float64) + 0.5) * (1.0 / 4294967296.0)


def derive_key(seed: int, *tags: int) -> tuple[int, int]:
    """64-bit Philox key for a (seed, tags) stream via numpy's SeedSequence."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(t) for t in tags))
    k = ss.generate_state(2, dtype=np.uint32)
    return int(k[0]), int(k[1])


def float_tag(value: float) -> int:
    """Stable integer tag for a float parameter (its IEEE-754 bits)."""
    return int(np.float64(value).view(np.uint64))


class CounterRNG:
    """Stateless random source keyed by a seed and stream tags."""

    def __init__(self, seed: int, *tags: int):
        self.seed = int(seed)
        self.tags = tuple(int(t) for t in tags)
        self.key = derive_key(self.seed, *self.tags)

    def block(self, path, c1, c2, purpose):
        return philox(path, c1, c2, purpose, *self.key)

    def event(self, path, j):
        """Uniforms for the j-th thinning event of each path.

        Returns (clock, accept, choice); ``clock`` lies in (0, 1].
        """
        w = self.block(path, j, 0, EVENT)
        clock = 1.0 - to_unit53(w[0], w[1])
        return clock, to_unit32(w[2]), to_unit32(w[3])

    def normal(self, path, step, sub, purpose=NORMAL):
        """Standard normal per counter via the inverse normal CDF."""
        w = self.block(path, step, sub, purpose)
        u = to_unit53(w[0], w[1]) + 2.0 ** -54
        return ndtri(u)
