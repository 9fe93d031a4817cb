"""Labelled random streams derived from one root seed.

Every consumer of randomness asks for a child stream keyed by a purpose label
and integer indices, so adding instrumentation (e.g. turning forgetting
measurement on) never shifts the draws seen by training.
"""
from __future__ import annotations

import zlib

import numpy as np


def _label_key(label: str) -> int:
    return zlib.crc32(label.encode("utf-8"))


def child_seed(root: int, label: str, *indices: int) -> np.random.SeedSequence:
    key = (_label_key(label),) + tuple(int(i) for i in indices)
    return np.random.SeedSequence(entropy=int(root), spawn_key=key)


def child_rng(root: int, label: str, *indices: int) -> np.random.Generator:
    """Independent generator for ``(root, label, *indices)``."""
    return np.random.Generator(np.random.PCG64(child_seed(root, label, *indices)))


def particle_rngs(root: int, t: int, num: int, label: str = "particles") -> list[np.random.Generator]:
    """One stream per particle index ``m`` at measurement time ``t``."""
    return [child_rng(root, label, t, m) for m in range(num)]


def derive_int(rng: np.random.Generator) -> int:
    """Draw a fresh 63-bit integer seed from ``rng``."""
    return int(rng.integers(0, 2**63 - 1))
