"""Counter-based random number generation (splitmix64).

Every draw is a pure function of ``(seed, counter)``, so any slice of a
stream can be regenerated independently and identical sequences can be
reproduced in any language from the constants below.  The generator is
the splitmix64 finalizer applied to ``seed + (counter + 1) * GOLDEN``,
which for ``counter = 0, 1, 2, ...`` is exactly the canonical splitmix64
output sequence started at state ``seed``.
"""

from __future__ import annotations

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX_1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX_2 = np.uint64(0x94D049BB133111EB)
_STREAM_SALT = np.uint64(0x632BE59BD9B4E019)

__all__ = ["mix64", "derive_seed", "raw64", "uniforms", "normals", "gumbels"]


def mix64(x) -> np.ndarray:
    """splitmix64 finalizer, elementwise on uint64 input."""
    z = np.asarray(x, dtype=np.uint64).copy()
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _MIX_1
        z = (z ^ (z >> np.uint64(27))) * _MIX_2
    return z ^ (z >> np.uint64(31))


def derive_seed(seed: int, tag: int) -> int:
    """Derive a substream seed from a root seed and an integer tag."""
    with np.errstate(over="ignore"):
        base = mix64(np.uint64(seed) ^ mix64(np.uint64(tag) + _STREAM_SALT))
    return int(base)


def raw64(seed: int, counters) -> np.ndarray:
    """uint64 outputs at the given counters of the stream ``seed``."""
    c = np.asarray(counters, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return mix64(np.uint64(seed) + (c + np.uint64(1)) * GOLDEN)


def uniforms(seed: int, counters) -> np.ndarray:
    """Uniform floats strictly inside (0, 1), one per counter.

    Uses the top 53 bits offset by half an ulp, so 0 and 1 are never
    produced and logs of the output are always finite.
    """
    return ((raw64(seed, counters) >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def normals(seed: int, counters) -> np.ndarray:
    """Standard normal draws, one per counter (Box-Muller, cosine branch).

    Draw ``i`` consumes stream counters ``2i`` and ``2i + 1``; disjoint
    counter sets therefore give independent normals.
    """
    c = np.asarray(counters, dtype=np.uint64)
    with np.errstate(over="ignore"):
        u1 = uniforms(seed, c * np.uint64(2))
        u2 = uniforms(seed, c * np.uint64(2) + np.uint64(1))
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def gumbels(seed: int, counters) -> np.ndarray:
    """Standard Gumbel draws, one per counter."""
    return -np.log(-np.log(uniforms(seed, counters)))
