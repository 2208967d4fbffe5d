"""
Deterministic seed derivation.

All randomness in multical flows from one user seed. Sub-seeds are derived
with the splitmix64 finalizer folded over the inputs:

    h = mix64(seed)
    for each v: h = splitmix64(h ^ (v mod 2**64))

where splitmix64(x) adds the golden-ratio increment 0x9E3779B97F4A7C15 and
applies the xor-shift-multiply finalizer (shifts 30, 27, 31; multipliers
0xBF58476D1CE4E5B9 and 0x94D049BB133111EB), all modulo 2**64. The result
depends only on the inputs, never on iteration order.
"""

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """One splitmix64 step on a 64-bit unsigned integer."""
    z = (x + GOLDEN_GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def mix64(seed: int, *values: int) -> int:
    """Derive a 64-bit sub-seed from ``seed`` and any number of integer coordinates."""
    h = splitmix64(seed & MASK64)
    for v in values:
        h = splitmix64(h ^ (int(v) & MASK64))
    return h
