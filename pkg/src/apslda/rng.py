"""SplitMix64 generator shared bit-for-bit by the compiled and pure-Python kernels.

numpy's generators cannot be stepped from inside a ``nogil`` Cython loop, so the
sampling kernels carry their own 64-bit state. Both kernel backends implement
exactly the recurrence below; :class:`Rng` is the Python-side owner of a state.
"""

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_MUL1 = 0xBF58476D1CE4E5B9
_MUL2 = 0x94D049BB133111EB
_INV53 = 1.0 / (1 << 53)


def mix64(z):
    z = ((z ^ (z >> 30)) * _MUL1) & MASK64
    z = ((z ^ (z >> 27)) * _MUL2) & MASK64
    return z ^ (z >> 31)


def derive_seed(*parts):
    """Hash a sequence of non-negative integers into a 64-bit seed."""
    h = 0x2545F4914F6CDD1D
    for p in parts:
        h = mix64(((h ^ (int(p) & MASK64)) + GOLDEN) & MASK64)
    return h


class Rng:
    """Seeded SplitMix64 stream.

    ``state`` is public so kernels can consume draws and hand the advanced state back.
    """

    __slots__ = ("state",)

    def __init__(self, seed=0):
        self.state = int(seed) & MASK64

    def next_u64(self):
        self.state = (self.state + GOLDEN) & MASK64
        return mix64(self.state)

    def uniform(self):
        return (self.next_u64() >> 11) * _INV53

    def randbelow(self, n):
        return int(self.uniform() * n)

    def __repr__(self):
        return f"Rng(state={self.state:#018x})"
