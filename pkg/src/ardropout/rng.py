"""Counter-based pseudo-random generator with independent per-stream substreams.

The generator is fully specified here so that a reimplementation in any
language produces bit-identical draws.  All arithmetic is modulo 2**64.

    mix64(z): the splitmix64 finalizer
        z ^= z >> 30;  z *= 0xBF58476D1CE4E5B9
        z ^= z >> 27;  z *= 0x94D049BB133111EB
        z ^= z >> 31

    stream_key(seed, stream) = mix64(mix64(seed + GOLDEN) + stream)
    raw64(seed, stream, counter) = mix64(stream_key + (counter + 1) * GOLDEN)

with GOLDEN = 0x9E3779B97F4A7C15.  A uniform double in [0, 1) takes the top
53 bits: (raw64 >> 11) * 2**-53.  Random access by counter makes the
generator splittable: distinct (seed, stream) pairs give independent
substreams, and draws within a substream are indexed, not sequential.
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_INV53 = 2.0**-53


def mix64(z: int) -> int:
    """splitmix64 finalizer; bijective on 64-bit integers."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def stream_key(seed: int, stream: int) -> int:
    return mix64((mix64((seed + _GOLDEN) & _MASK64) + stream) & _MASK64)


def raw64(seed: int, stream: int, counter: int) -> int:
    return mix64((stream_key(seed, stream) + ((counter + 1) * _GOLDEN)) & _MASK64)


def uniform64(seed: int, stream: int, counter: int) -> float:
    """Uniform double in [0, 1) from the top 53 bits of raw64."""
    return (raw64(seed, stream, counter) >> 11) * _INV53


class StreamRng:
    """Sequential view of one (seed, stream) substream.

    Keeps only a draw counter; state transition is counter += 1 per draw.
    """

    def __init__(self, seed: int, stream: int = 0):
        self._key = stream_key(seed, stream)
        self.counter = 0

    def next_raw(self) -> int:
        value = mix64((self._key + ((self.counter + 1) * _GOLDEN)) & _MASK64)
        self.counter += 1
        return value

    def uniform(self) -> float:
        return (self.next_raw() >> 11) * _INV53

    def uniform_in(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.uniform()

    def bernoulli(self, prob: float) -> int:
        return 1 if self.uniform() < prob else 0
