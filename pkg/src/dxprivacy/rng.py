"""Counter-based random streams.

Every random draw in the package is a pure function of a stream identity
``(master_seed, context, item, trial)`` plus a draw index, so results never
depend on call order, chunking or worker count.

Construction: Philox4x32-10 (Salmon et al., "Parallel random numbers: as easy
as 1, 2, 3").  The 64-bit key is the first 8 bytes of
``blake2b(f"{master_seed}:{context}")``.  The 128-bit counter is laid out as::

    word 0   draw block index within the stream
    word 1   trial index
    word 2   item index
    word 3   lane (0 = radius, 1 + attempt = direction, LANE_UNIFORM = generic)

so item and trial indices must fit in 32 bits.  Each Philox block yields
four 32-bit words; two words make one 53-bit uniform in the open interval
(0, 1).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numba
import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)

LANE_RADIUS = 0
LANE_DIRECTION = 1
LANE_UNIFORM = 0xFFFFFFFF
MAX_INDEX = 2**32 - 1


@dataclass(frozen=True)
class RngStream:
    """Identity of one independent random stream."""

    master_seed: int
    context: str
    item: int = 0
    trial: int = 0

    def __post_init__(self):
        check_index(self.item, "item")
        check_index(self.trial, "trial")


def check_index(value, name: str) -> None:
    arr = np.asarray(value)
    if arr.size and (arr.min() < 0 or arr.max() > MAX_INDEX):
        raise ValueError(f"{name} index must lie in [0, 2**32)")


def derive_key(master_seed: int, context: str) -> tuple[int, int]:
    """Map ``(master_seed, context)`` to a 2x32-bit Philox key."""
    if not 0 <= int(master_seed) < 2**64:
        raise ValueError("master_seed must be a 64-bit unsigned integer")
    digest = hashlib.blake2b(f"{int(master_seed)}:{context}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest[:4], "little"), int.from_bytes(digest[4:], "little")


@numba.njit(cache=True, nogil=True)
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Philox4x32-10 block function on uint64-held 32-bit words."""
    for r in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0 = p0 >> _SHIFT32
        lo0 = p0 & _MASK32
        hi1 = p1 >> _SHIFT32
        lo1 = p1 & _MASK32
        c0 = hi1 ^ c1 ^ k0
        c1 = lo1
        c2 = hi0 ^ c3 ^ k1
        c3 = lo0
        if r < 9:
            k0 = (k0 + _W0) & _MASK32
            k1 = (k1 + _W1) & _MASK32
    return c0, c1, c2, c3


@numba.njit(cache=True, nogil=True)
def _to_unit(a, b):
    # 27 + 26 bits, centred so the result is never 0 or 1
    v = np.float64((a >> np.uint64(5)) * np.uint64(67108864) + (b >> np.uint64(6)))
    return (v + 0.5) / 9007199254740992.0


@numba.njit(cache=True, nogil=True)
def _uniform_kernel(k0, k1, items, trials, lane, count, out):
    for r in range(items.shape[0]):
        it = np.uint64(items[r])
        tr = np.uint64(trials[r])
        for j in range((count + 1) // 2):
            x0, x1, x2, x3 = philox4x32(np.uint64(j), tr, it, lane, k0, k1)
            out[r, 2 * j] = _to_unit(x0, x1)
            if 2 * j + 1 < count:
                out[r, 2 * j + 1] = _to_unit(x2, x3)


@numba.njit(cache=True, nogil=True)
def _direction_kernel(k0, k1, items, trials, n, out):
    two_pi = 2.0 * np.pi
    for r in range(items.shape[0]):
        it = np.uint64(items[r])
        tr = np.uint64(trials[r])
        attempt = 0
        while True:
            lane = np.uint64(1 + attempt)
            norm2 = 0.0
            for j in range((n + 1) // 2):
                x0, x1, x2, x3 = philox4x32(np.uint64(j), tr, it, lane, k0, k1)
                u1 = _to_unit(x0, x1)
                u2 = _to_unit(x2, x3)
                rad = np.sqrt(-2.0 * np.log(u1))
                z0 = rad * np.cos(two_pi * u2)
                out[r, 2 * j] = z0
                norm2 += z0 * z0
                if 2 * j + 1 < n:
                    z1 = rad * np.sin(two_pi * u2)
                    out[r, 2 * j + 1] = z1
                    norm2 += z1 * z1
            if norm2 > 0.0:
                break
            attempt += 1
        inv = 1.0 / np.sqrt(norm2)
        for c in range(n):
            out[r, c] *= inv


def _prep(items, trials):
    items = np.atleast_1d(np.asarray(items, dtype=np.int64))
    trials = np.atleast_1d(np.asarray(trials, dtype=np.int64))
    items, trials = np.broadcast_arrays(items, trials)
    if items.ndim != 1:
        raise ValueError("items and trials must be scalars or 1-D arrays")
    check_index(items, "item")
    check_index(trials, "trial")
    return np.ascontiguousarray(items, dtype=np.uint64), np.ascontiguousarray(trials, dtype=np.uint64)


def uniforms(master_seed: int, context: str, items, trials, count: int, lane: int = LANE_UNIFORM) -> np.ndarray:
    """Uniform(0, 1) draws, shape ``(len(items), count)``.

    ``items`` and ``trials`` broadcast against each other; row ``i`` depends
    only on ``(master_seed, context, items[i], trials[i])``.
    """
    items, trials = _prep(items, trials)
    k0, k1 = derive_key(master_seed, context)
    out = np.empty((items.shape[0], count), dtype=np.float64)
    if count > 0:
        _uniform_kernel(np.uint64(k0), np.uint64(k1), items, trials, np.uint64(lane), count, out)
    return out


def unit_directions(master_seed: int, context: str, items, trials, n: int) -> np.ndarray:
    """Uniform points on the unit sphere in R^n, one row per (item, trial).

    Standard normals by Box-Muller, normalised; an all-zero draw is redrawn
    from the next attempt lane.
    """
    if n <= 0:
        raise ValueError("dimension must be positive")
    items, trials = _prep(items, trials)
    k0, k1 = derive_key(master_seed, context)
    out = np.empty((items.shape[0], n), dtype=np.float64)
    _direction_kernel(np.uint64(k0), np.uint64(k1), items, trials, n, out)
    return out
