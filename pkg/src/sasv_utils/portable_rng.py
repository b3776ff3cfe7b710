"""SplitMix64 counter-based generator.

Draw ``i`` (1-based) of a generator seeded with ``s`` is::

    z = (s + i * 0x9E3779B97F4A7C15) mod 2**64
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 mod 2**64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB mod 2**64
    z = z ^ (z >> 31)

Uniforms take the top 53 bits, normals use Box-Muller on consecutive
uniform pairs. Any language with 64-bit unsigned arithmetic reproduces
the same streams, which keeps synthetic fixtures identical everywhere.
"""

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_TWO_POW_M53 = 2.0 ** -53


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))

def mix64(value: int) -> int:
    """SplitMix64 finalizer on a single integer."""
    with np.errstate(over='ignore'):
        return int(_mix(np.array([value & MASK64], dtype=np.uint64))[0])


class PortableRng:

    def __init__(self, seed: int) -> None:
        self.seed = seed & MASK64
        self.counter = 0

    def uint64(self, n: int) -> np.ndarray:
        if n < 0:
            raise ValueError(f"Negative draw count: {n}")
        steps = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over='ignore'):
            return _mix(np.uint64(self.seed) + steps * np.uint64(GOLDEN_GAMMA))

    def uniform(self, n: int) -> np.ndarray:
        """n draws in [0, 1)."""
        return (self.uint64(n) >> np.uint64(11)).astype(np.float64) * _TWO_POW_M53

    def uniform_range(self, low: float, high: float, n: int) -> np.ndarray:
        return low + (high - low) * self.uniform(n)

    def normal(self, n: int, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs)
        u1 = 1.0 - u[0::2]  # (0, 1]
        u2 = u[1::2]
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * np.pi * u2
        z = np.empty(2 * pairs, dtype=np.float64)
        z[0::2] = radius * np.cos(angle)
        z[1::2] = radius * np.sin(angle)
        return mean + std * z[:n]

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform(n), kind='stable')

    def choice(self, n_items: int, k: int) -> np.ndarray:
        """k distinct indices from range(n_items), in draw order."""
        if k > n_items:
            raise ValueError(f"Cannot draw {k} distinct items from {n_items}")
        return self.permutation(n_items)[:k]

    def spawn(self, stream: int) -> "PortableRng":
        """Independent generator for a named sub-stream."""
        return PortableRng(mix64(self.seed ^ (stream & MASK64)))
