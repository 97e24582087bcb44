"""
Seeding helpers
Counter-based Philox streams keyed by (seed, *keys) so that any block of work can be
regenerated independently of the others.
"""

from typing import Iterator, Tuple

import numpy as np

_MASK64 = (1 << 64) - 1

# Default rows per independently keyed block
DEFAULT_BLOCK_SIZE = 4096


def _seed_sequence(seed: int, keys: Tuple[int, ...]) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed) & _MASK64, spawn_key=tuple(int(k) & _MASK64 for k in keys))


def make_generator(seed: int, *keys: int) -> np.random.Generator:
    """Philox generator for the stream identified by (seed, *keys)."""
    return np.random.Generator(np.random.Philox(_seed_sequence(seed, keys)))


def derive_seed(master: int, *keys: int) -> int:
    """Hash (master, *keys) to a 64-bit child seed."""
    return int(_seed_sequence(master, keys).generate_state(1, dtype=np.uint64)[0])


def row_blocks(n: int, block_size: int = DEFAULT_BLOCK_SIZE) -> Iterator[Tuple[int, int, int]]:
    """Yield (block_index, start, stop) covering range(n)."""
    block_size = max(1, int(block_size))
    for b, start in enumerate(range(0, n, block_size)):
        yield b, start, min(n, start + block_size)
