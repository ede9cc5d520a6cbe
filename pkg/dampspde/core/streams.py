"""
Random Streams
Counter-based generators with explicit (seed, path, channel) derivation
"""
from enum import IntEnum
import logging

import numpy as np

logger = logging.getLogger(__name__)


class Channel(IntEnum):
    """Independent stream families of one path"""
    POINT = 0
    DISTRIBUTED = 1
    CONVOLUTION = 2
    AUXILIARY = 3
    MONTE_CARLO = 4


def derive_generator(seed: int, *key: int) -> np.random.Generator:
    """
    Build a Philox generator for a derived stream

    The stream is a pure function of the seed and the spawn key, so
    parallel workers reproduce the same numbers regardless of scheduling.

    Args:
        seed: Run seed (non-negative integer)
        key: Spawn key, e.g. (path_id, channel)

    Returns:
        Independent numpy Generator
    """
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(sequence))


def path_generator(seed: int, path_id: int, channel: Channel) -> np.random.Generator:
    """Generator of one channel of one Monte-Carlo path"""
    return derive_generator(seed, path_id, int(channel))


class NormalBlockStream:
    """
    Standard normal rows of fixed width, drawn from a generator in blocks

    Rows come out in draw order, so the sequence does not depend on the
    block size.
    """

    def __init__(self, generator: np.random.Generator, width: int, block: int = 256):
        if width < 0 or block < 1:
            raise ValueError(f"invalid stream shape (width={width}, block={block})")
        self.generator = generator
        self.width = int(width)
        self.block = int(block)
        self._buffer = np.zeros((0, self.width))
        self._cursor = 0

    def take(self, rows: int) -> np.ndarray:
        """Next rows x width standard normals"""
        out = np.empty((rows, self.width))
        filled = 0
        while filled < rows:
            if self._cursor == len(self._buffer):
                self._buffer = self.generator.standard_normal((self.block, self.width))
                self._cursor = 0
            count = min(rows - filled, len(self._buffer) - self._cursor)
            out[filled:filled + count] = self._buffer[self._cursor:self._cursor + count]
            self._cursor += count
            filled += count
        return out
