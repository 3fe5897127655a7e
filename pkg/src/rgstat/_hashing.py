# Counter-based randomness: every draw is a pure function of its key, so lazily
# generated graphs do not depend on the order in which vertices are queried.
MASK64 = (1 << 64) - 1
_INV53 = 1.0 / (1 << 53)


def mix64(x: int) -> int:
    """splitmix64 finalizer."""
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def hash_ints(*values: int) -> int:
    h = 0x6A09E667F3BCC908
    for v in values:
        h = mix64(h ^ (v & MASK64))
    return h


def unit_float(h: int) -> float:
    """Map a 64-bit hash to [0, 1)."""
    return (h >> 11) * _INV53


def derive_seed(base: int, *keys: int) -> int:
    """Deterministic 63-bit child seed, usable by numpy and by the oracles."""
    return hash_ints(base, *keys) >> 1
