"""Seed handling.

Every random draw in the package derives from a single integer seed through
:class:`numpy.random.SeedSequence` spawn keys.  A stream is addressed by a
tuple of non-negative integer counters, e.g. ``(epoch, step, element)``, so
the same stream is reproduced regardless of the order in which streams are
requested (serial and parallel runs agree).
"""

import numpy as np

# stream namespaces, first element of every spawn key
PHANTOM = 0
SAMPLE = 1
INIT = 2
SHUFFLE = 3
EVAL = 4


def stream(seed, *keys):
    """Return an independent generator for ``seed`` and counter ``keys``."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.default_rng(ss)


def derive_seed(seed, *keys):
    """Collapse a stream address to a fresh 64-bit integer seed."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
