"""Deterministic RNG streams derived from one experiment seed.

Each consumer (parameter init, data shuffling, noise synthesis, ...) gets an
independent stream keyed by a string tag plus optional integers, so adding a
new consumer never perturbs existing streams.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _tag_to_int(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & 0xFFFFFFFF
    digest = hashlib.sha256(str(tag).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def seeded_rng(seed: int, *tags) -> np.random.Generator:
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_tag_to_int(t) for t in tags]
    return np.random.default_rng(np.random.SeedSequence(entropy))
