"""Deterministic seed splitting.

Child seeds are ``splitmix64(master ^ splitmix64(index))`` so that per-item
streams are independent of generation order and of how work is partitioned
across processes.
"""

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    z = (x + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, index: int) -> int:
    return splitmix64((master & MASK64) ^ splitmix64(index & MASK64))
