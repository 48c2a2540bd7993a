"""Counter-based random streams (Philox4x32-10) addressed by
``(seed, replicate, box, kind, tag, element)``.

Every value is a pure function of its address, so results do not depend on
evaluation order, chunking or worker count.
"""
from __future__ import annotations

import numpy as np

M0 = np.uint64(0xD2511F53)
M1 = np.uint64(0xCD9E8D57)
W0 = np.uint64(0x9E3779B9)
W1 = np.uint64(0xBB67AE85)
MASK32 = np.uint64(0xFFFFFFFF)
SHIFT32 = np.uint64(32)

KIND_BITS = 0
KIND_UNIFORM = 1
KIND_WEIGHT = 2

BITS_PER_BLOCK = 128
MAX_BOX_COORD = 1 << 15


def philox4x32(counter, key, rounds: int = 10) -> np.ndarray:
    """Philox4x32 on arrays: ``counter`` is (..., 4), ``key`` is (..., 2) of 32-bit words."""
    c = np.asarray(counter, dtype=np.uint64) & MASK32
    k = np.asarray(key, dtype=np.uint64) & MASK32
    c0, c1, c2, c3 = (c[..., i].copy() for i in range(4))
    k0 = np.broadcast_to(k[..., 0], c0.shape).copy()
    k1 = np.broadcast_to(k[..., 1], c0.shape).copy()
    for r in range(rounds):
        if r:
            k0 = (k0 + W0) & MASK32
            k1 = (k1 + W1) & MASK32
        p0 = c0 * M0
        p1 = c2 * M1
        c0, c1, c2, c3 = (
            (p1 >> SHIFT32) ^ c1 ^ k0,
            p1 & MASK32,
            (p0 >> SHIFT32) ^ c3 ^ k1,
            p0 & MASK32,
        )
    return np.stack([c0, c1, c2, c3], axis=-1)


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return x ^ (x >> 31)


def derive_key(seed: int, replicate: int) -> tuple[int, int]:
    """64-bit Philox key for one replicate of a master seed."""
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit integer (got {seed})")
    if replicate < 0:
        raise ValueError(f"replicate must be >= 0 (got {replicate})")
    x = _splitmix64(_splitmix64(seed) ^ replicate)
    return x & 0xFFFFFFFF, x >> 32


def _zigzag(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.int64)
    if np.any(np.abs(v) >= MAX_BOX_COORD):
        raise ValueError("box coordinate out of the addressable range")
    return np.where(v >= 0, 2 * v, -2 * v - 1).astype(np.uint64)


def _box_words(boxes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    boxes = np.atleast_2d(np.asarray(boxes, dtype=np.int64))
    d = boxes.shape[1]
    if d > 3:
        raise ValueError("stream addressing supports d <= 3")
    z = [_zigzag(boxes[:, i]) for i in range(d)]
    w2 = z[0] | (z[1] << np.uint64(16))
    w3 = z[2] if d == 3 else np.zeros_like(z[0])
    return w2, w3


def raw_blocks(seed: int, replicate: int, boxes, kind: int, tag: int, block: np.ndarray) -> np.ndarray:
    """Philox output words, shape (n_boxes, n_blocks, 4), for each box and block index."""
    k0, k1 = derive_key(seed, replicate)
    w2, w3 = _box_words(boxes)
    w3 = w3 | (np.uint64(kind & 0xFF) << np.uint64(16))
    block = np.asarray(block, dtype=np.uint64)
    nb, nk = w2.shape[0], block.shape[0]
    ctr = np.empty((nb, nk, 4), dtype=np.uint64)
    ctr[..., 0] = block[None, :]
    ctr[..., 1] = np.uint64(tag & 0xFFFFFFFF)
    ctr[..., 2] = w2[:, None]
    ctr[..., 3] = w3[:, None]
    return philox4x32(ctr, np.array([k0, k1], dtype=np.uint64))


def bit_tapes(seed: int, replicate: int, boxes, tag: int = 0, kind: int = KIND_BITS) -> np.ndarray:
    """First 128 fair bits of each box's count tape, shape (n_boxes, 128), uint8."""
    words = raw_blocks(seed, replicate, boxes, kind, tag, np.zeros(1))[:, 0, :]
    shifts = np.arange(31, -1, -1, dtype=np.uint64)
    bits = (words[:, :, None] >> shifts[None, None, :]) & np.uint64(1)
    return bits.reshape(words.shape[0], BITS_PER_BLOCK).astype(np.uint8)


def uniform_tapes(seed: int, replicate: int, boxes, n_points: int, dim: int, tag: int = 0) -> np.ndarray:
    """First ``n_points`` locations in [0,1)^dim for each box, shape (n_boxes, n_points, dim).

    Coordinate ``c`` of point ``k`` (0-based) is double number ``k*dim + c``
    of the stream; each Philox block yields two 53-bit doubles.
    """
    boxes = np.atleast_2d(np.asarray(boxes, dtype=np.int64))
    if n_points <= 0:
        return np.zeros((boxes.shape[0], 0, dim))
    n_doubles = n_points * dim
    n_blocks = (n_doubles + 1) // 2
    words = raw_blocks(seed, replicate, boxes, KIND_UNIFORM, tag, np.arange(n_blocks))
    hi = words[..., 0::2] >> np.uint64(5)
    lo = words[..., 1::2] >> np.uint64(6)
    u = (hi.astype(np.float64) * 67108864.0 + lo.astype(np.float64)) / 9007199254740992.0
    u = u.reshape(boxes.shape[0], 2 * n_blocks)[:, :n_doubles]
    return u.reshape(boxes.shape[0], n_points, dim)
