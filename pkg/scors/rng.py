"""
Keyed random streams.

Every consumer draws from its own counter-based Philox stream keyed by
(experiment seed, replicate id, purpose tag), so replicates never share state
and a run is reproducible bitwise from its key alone.
"""

import zlib

import numpy as np

# Purpose tags used across the package
COMPONENTS = "components"
DIRECTIONS = "directions"
INIT = "init"
DATA = "data"
MONTE_CARLO = "monte_carlo"


def purpose_key(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def stream(seed: int, replicate: int = 0, purpose: str = "main") -> np.random.Generator:
    if seed < 0 or replicate < 0:
        raise ValueError(f"seed and replicate must be non-negative (seed={seed}, replicate={replicate})")
    sequence = np.random.SeedSequence([int(seed), int(replicate), purpose_key(purpose)])
    return np.random.Generator(np.random.Philox(sequence))
