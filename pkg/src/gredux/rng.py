"""Counter-based normal variates.

Each Gaussian draw is a pure function of ``(master_seed, stream, step, path,
block)``: the 256-bit counter ``(step, path, block, stream)`` is encrypted
with Philox4x64-10 under the key ``(master_seed, 0xC0FFEE)``. The four 64-bit
output words become four uniforms in (0, 1) (top 53 bits, offset by half an
ulp) and then four normals by Box-Muller. No state is carried between calls,
so results do not depend on evaluation order or on how paths are batched.
"""
from __future__ import annotations

import numpy as np

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_MASK32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_KEY1 = 0xC0FFEE


def _mulhilo(a: np.uint64, b: np.ndarray):
    lo = a * b  # wraps modulo 2**64
    a_lo, a_hi = a & _MASK32, a >> _S32
    b_lo, b_hi = b & _MASK32, b >> _S32
    ll = a_lo * b_lo
    lh = a_lo * b_hi
    hl = a_hi * b_lo
    hh = a_hi * b_hi
    mid = (ll >> _S32) + (lh & _MASK32) + (hl & _MASK32)
    hi = hh + (lh >> _S32) + (hl >> _S32) + (mid >> _S32)
    return hi, lo


def philox4x64(counter, key):
    """Philox4x64-10 block function.

    ``counter`` is a sequence of four uint64 arrays (broadcastable), ``key``
    a pair of ints. Returns four uint64 arrays.
    """
    with np.errstate(over="ignore"):
        c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) for c in counter)
        c0, c1, c2, c3 = np.broadcast_arrays(c0, c1, c2, c3)
        k0 = np.uint64(key[0] & 0xFFFFFFFFFFFFFFFF)
        k1 = np.uint64(key[1] & 0xFFFFFFFFFFFFFFFF)
        for r in range(10):
            if r:
                k0 = k0 + _W0
                k1 = k1 + _W1
            hi0, lo0 = _mulhilo(_M0, c0)
            hi1, lo1 = _mulhilo(_M1, c2)
            c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return c0, c1, c2, c3


def _uniform(words):
    return ((words >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def normals(master_seed: int, step: int, paths, n_dims: int, stream: int = 0) -> np.ndarray:
    """Standard normals of shape ``(len(paths), n_dims)`` for one time step."""
    paths = np.asarray(paths, dtype=np.uint64)
    n_blocks = -(-n_dims // 4)
    out = np.empty((paths.size, 4 * n_blocks))
    for b in range(n_blocks):
        w = philox4x64((np.uint64(step), paths, np.uint64(b), np.uint64(stream)), (master_seed, _KEY1))
        u = [_uniform(x) for x in w]
        for j, (u1, u2) in enumerate(((u[0], u[1]), (u[2], u[3]))):
            rad = np.sqrt(-2.0 * np.log(u1))
            out[:, 4 * b + 2 * j] = rad * np.cos(2.0 * np.pi * u2)
            out[:, 4 * b + 2 * j + 1] = rad * np.sin(2.0 * np.pi * u2)
    return out[:, :n_dims]


def brownian_increments(master_seed: int, step: int, n_paths: int, n_dims: int, dt: float,
                        stream: int = 0) -> np.ndarray:
    return np.sqrt(dt) * normals(master_seed, step, np.arange(n_paths), n_dims, stream)
