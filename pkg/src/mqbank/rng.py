"""Deterministic counter-based random streams (numpy Philox).

Every stochastic operation in the package derives its generator from an
explicit seed plus a tuple of stream indices, so results are reproducible
per (seed, road index, sample index, ...) regardless of call order.
"""

from __future__ import annotations

import zlib

import numpy as np

_MASK = (1 << 64) - 1
_MIX = 0x9E3779B97F4A7C15


def stream_rng(seed: int, *stream: int | str) -> np.random.Generator:
    """Generator for one (seed, *stream) tuple; streams never overlap."""
    acc = 0x243F6A8885A308D3
    for s in stream:
        if isinstance(s, str):
            s = zlib.crc32(s.encode("utf-8"))
        acc = ((acc ^ (int(s) & _MASK)) * _MIX) & _MASK
        acc = (acc ^ (acc >> 29)) & _MASK
    key = np.array([int(seed) & _MASK, acc], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(counter=0, key=key))
