"""Deterministic named RNG streams.

All randomness in a run flows from one root seed. Each consumer asks for a
stream by name (plus optional integer indices, e.g. per-seed or per-game),
so reordering unrelated work never perturbs another component's draws.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _name_entropy(name: str) -> int:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def substream(root_seed: int, name: str, *indices: int) -> np.random.Generator:
    """Generator for (root_seed, name, indices), independent across names."""
    entropy = [int(root_seed), _name_entropy(name), *[int(i) for i in indices]]
    return np.random.default_rng(np.random.SeedSequence(entropy))
