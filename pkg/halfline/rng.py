"""
Deterministic random streams.

Paths are grouped into fixed-size chunks. Chunk k draws from a Philox
generator keyed by SeedSequence(seed, spawn_key=(k, stream)), and every
live lane of a chunk consumes one row entry per step. The normal used by
path i at step j is therefore a function of (seed, i, j) only, whichever
worker ends up running the chunk.
"""

from typing import Tuple

import numpy as np

NORMALS = 0
UNIFORMS = 1

CHUNK_SIZE = 4096


def generator(seed: int, chunk: int, stream: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(chunk, stream))
    return np.random.Generator(np.random.Philox(ss))


def chunk_bounds(n_paths: int, chunk_size: int = CHUNK_SIZE) -> Tuple[Tuple[int, int], ...]:
    """(first path, path count) for each chunk, in chunk order."""
    return tuple((start, min(chunk_size, n_paths - start)) for start in range(0, n_paths, chunk_size))


def locate(path_index: int, chunk_size: int = CHUNK_SIZE) -> Tuple[int, int]:
    """(chunk, lane) holding a given path."""
    return divmod(path_index, chunk_size)


class ChunkStreams:
    """Normal and uniform rows for one chunk; row j feeds step j of every lane."""

    def __init__(self, seed: int, chunk: int, lanes: int):
        self.lanes = lanes
        self._normals = generator(seed, chunk, NORMALS)
        self._uniforms = generator(seed, chunk, UNIFORMS)

    def step(self) -> Tuple[np.ndarray, np.ndarray]:
        return self._normals.standard_normal(self.lanes), self._uniforms.random(self.lanes)
