"""Counter-based random streams.

Every consumer of randomness derives its own Philox generator from
(master seed, purpose tag, index), so results are reproducible no matter
how work is scheduled across workers.
"""

from __future__ import annotations

import numpy as np

# Purpose tags. Fixed forever; changing one silently changes every stream.
TAG_FIELD = 1       # driver field w of the moving-average sampler
TAG_FLOOR = 2       # independent-entry floor field v
TAG_EXACT = 3       # normals feeding the exact Gaussian sampler
TAG_WINDOW = 4      # windowed Monte-Carlo paths
TAG_OU = 5          # fresh increments for the OU transition
TAG_GOE = 6         # GOE reference samples
TAG_CHILD = 7       # derived child seeds (seed fan-out)


def stream(seed: int, tag: int, index: int = 0) -> np.random.Generator:
    """Return the Philox generator keyed by (seed, tag, index)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(tag), int(index)))
    return np.random.Generator(np.random.Philox(ss))


def child_seed(seed: int, index: int) -> int:
    """Derive a reproducible integer sub-seed from a master seed."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(TAG_CHILD, int(index)))
    a, b = ss.generate_state(2, dtype=np.uint64)
    return (int(a) << 64) | int(b)
