"""Deterministic random-stream derivation.

All randomness in the package flows from one master seed per command.
Sub-streams are derived by hashing string labels (plus optional integer
indices) into the seed sequence, so concurrent or reordered execution
cannot change what any consumer draws.
"""

from __future__ import annotations

import zlib

import numpy as np


def subrng(seed: int, *labels: str | int) -> np.random.Generator:
    """Return a generator for the stream identified by ``(seed, *labels)``."""
    entropy = [int(seed) & 0xFFFFFFFF]
    for label in labels:
        if isinstance(label, str):
            entropy.append(zlib.crc32(label.encode("utf-8")))
        else:
            entropy.append(int(label) & 0xFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(entropy))
