"""Named, independent random substreams derived from one global seed.

Every source of randomness in an experiment (data generation, diffusion
masking, weight init, decoding, ...) draws from its own named stream so that
changing how one component consumes randomness cannot perturb the others.
Stream derivation is hash-based and stable across platforms and sessions.
"""

from __future__ import annotations

import hashlib

import numpy as np


def substream(seed: int, name: str) -> np.random.Generator:
    """Generator for the (seed, name) stream; same inputs, same stream."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed)] + words)))
