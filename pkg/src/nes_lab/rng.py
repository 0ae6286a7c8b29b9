"""Seeded random streams.

Every run uses numpy's PCG64 (a 64-bit permuted congruential generator)
seeded through :class:`numpy.random.SeedSequence`.  Independent consumers of
one run seed (noise injection, splitting, initialisation, mini-batch order)
draw from named child streams so adding a consumer never shifts another's
numbers.
"""

import zlib

import numpy as np

GENERATOR = "PCG64"


def stream(seed, name=""):
    """Return a generator for the child stream ``name`` of run seed ``seed``."""
    key = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    if name:
        key.append(zlib.crc32(name.encode("utf-8")))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))


def spawn(seed, n):
    """Split a run seed into ``n`` independent generators."""
    children = np.random.SeedSequence(int(seed)).spawn(n)
    return [np.random.Generator(np.random.PCG64(s)) for s in children]
