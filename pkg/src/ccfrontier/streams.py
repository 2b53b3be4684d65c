"""Deterministic random-stream derivation.

A master seed (any non-negative integer, typically 64-bit) is turned into a
tree of independent streams by counter splitting: the stream for key path
``(a, b, c)`` is ``SeedSequence(master, spawn_key=(a, b, c))``. Children of a
stream append to its key path, so the derivation never depends on how many
draws a sibling consumed.

Key layout used by the package::

    (0,)                 scenario initializer (shared by all replicates)
    (1, r)               replicate r
    (1, r, 0)            fixed certification sample
    (1, r, 1)            step-length preprocessing
    (1, r, 2, i)         frontier point i
    (..., i, 0)          smoothing scale sample for that point
    (..., i, 1, k, q)    stage k, run q
    (..., i, 2, k)       stage k run pick when strict_theory is set
"""

import numpy as np


def child(seed, *keys):
    """Return the ``SeedSequence`` at ``keys`` below ``seed``."""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy,
                                      spawn_key=tuple(seed.spawn_key) + keys)
    return np.random.SeedSequence(int(seed), spawn_key=keys)


def generator(seed, *keys):
    """A PCG64 generator on the stream at ``keys`` below ``seed``."""
    return np.random.Generator(np.random.PCG64(child(seed, *keys)))
