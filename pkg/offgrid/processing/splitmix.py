"""
splitmix64: the deterministic generator every workload draws from.

The k-th output (k >= 1) of a generator seeded with s is mix64(s + k * GAMMA),
so a whole block can be produced at once with numpy.
"""
import numpy as np

from offgrid.utils.logger_setup import log_debug

log_debug("processing.splitmix module initialized.")

MASK64 = 0xFFFFFFFFFFFFFFFF
GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB


def mix64(z):
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


class SplitMix64:

    def __init__(self, seed):
        self.state = seed & MASK64

    def next(self):
        self.state = (self.state + GAMMA) & MASK64
        return mix64(self.state)

    def uniform(self):
        """Float in [0, 1) from the top 53 bits."""
        return (self.next() >> 11) * 2.0 ** -53

    def guid(self):
        return self.next().to_bytes(8, 'big') + self.next().to_bytes(8, 'big')


def block(seed, count, start=0):
    """Outputs start+1 .. start+count of the generator seeded with `seed`, as uint64."""
    k = np.arange(start + 1, start + 1 + count, dtype=np.uint64)
    z = np.uint64(seed & MASK64) + k * np.uint64(GAMMA)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def stream_bytes(seed, size):
    """`size` bytes: the generator's outputs, big-endian, concatenated."""
    words = block(seed, (size + 7) // 8)
    return words.astype('>u8').tobytes()[:size]


def uniform_block(seed, count):
    return (block(seed, count) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
