"""Per-path random streams derived from a master seed.

Path ``i`` gets ``seed_i = splitmix64(master + (i + 1) * 0x9E3779B97F4A7C15)``
(all arithmetic mod 2**64), which seeds a PCG64 generator.  Standard normals
come from numpy's ``Generator.standard_normal``.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    z = (x + GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def path_seed(master: int, index: int) -> int:
    return splitmix64((int(master) + (index + 1) * GOLDEN) & MASK64)


def path_generator(master: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(path_seed(master, index)))


class NormalStreams:
    """Chunked normal draws for a batch of paths; chunking does not change the stream."""

    def __init__(self, master: int, indices, width: int):
        self.gens = [path_generator(master, i) for i in indices]
        self.width = width

    def draw(self, steps: int) -> np.ndarray:
        """Array of shape ``(n_paths, steps, width)``."""
        out = np.empty((len(self.gens), steps, self.width))
        for k, g in enumerate(self.gens):
            out[k] = g.standard_normal((steps, self.width))
        return out
