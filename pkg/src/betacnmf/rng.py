"""Seeded random streams for the benchmark.

Every stream is keyed by ``(master_seed, purpose, index)``. The purpose tag
is hashed with CRC-32 and the three integers seed a numpy ``SeedSequence``
feeding a PCG64 generator, so a run's data never depends on how many other
runs came before it or in which order they were executed.
"""

from __future__ import annotations

import zlib

import numpy as np

SEED_MASK = (1 << 64) - 1


def derive_rng(master_seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    tag = zlib.crc32(purpose.encode("utf-8"))
    seq = np.random.SeedSequence([int(master_seed) & SEED_MASK, tag, int(index)])
    return np.random.Generator(np.random.PCG64(seq))


def standard_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """N(0, 1) deviates by the Box-Muller transform of the uniform stream."""
    n = int(np.prod(shape))
    half = (n + 1) // 2
    u1 = 1.0 - rng.random(half)  # (0, 1], keeps log finite
    u2 = rng.random(half)
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    z = np.empty(2 * half)
    z[0::2] = r * np.cos(theta)
    z[1::2] = r * np.sin(theta)
    return z[:n].reshape(shape)


def chi2_2(rng: np.random.Generator, shape) -> np.ndarray:
    """Chi-squared deviates with two degrees of freedom, as sums of two squared normals."""
    g = standard_normal(rng, (2, *np.atleast_1d(shape)))
    return g[0] ** 2 + g[1] ** 2
