"""Deterministic seed derivation.

Every random decision in a run is drawn from a generator derived from one of
the four root seeds (data, init, scheduler, attack) plus a string/int key
path, so reruns and reordered call sites cannot perturb each other's streams.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_to_ints(key: tuple) -> tuple[int, ...]:
    out = []
    for part in key:
        if isinstance(part, (int, np.integer)):
            out.append(int(part) & 0xFFFFFFFF)
        elif isinstance(part, str):
            out.append(zlib.crc32(part.encode("utf-8")))
        else:
            raise TypeError(f"seed key parts must be int or str, got {type(part)!r}")
    return tuple(out)


def seed_sequence(root: int, *key) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(root), spawn_key=_key_to_ints(key))


def derive_seed(root: int, *key) -> int:
    """A 63-bit integer seed derived from a root seed and a key path."""
    state = seed_sequence(root, *key).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


def rng(root: int, *key) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed_sequence(root, *key)))
