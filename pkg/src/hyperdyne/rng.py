"""Named random streams derived from one master seed.

Every consumer asks for ``stream(seed, name, index)``; the stream depends only on
those three values, so results do not depend on execution order or thread count.
"""

import zlib

import numpy as np

STREAMS = ("ensemble", "trace", "photons", "chains", "surrogate", "sweep", "ladder")


def _key(name):
    return zlib.crc32(name.encode("utf-8"))


def seed_sequence(seed, name, *index):
    return np.random.SeedSequence(entropy=int(seed), spawn_key=(_key(name),) + tuple(int(i) for i in index))


def stream(seed, name, *index):
    return np.random.default_rng(seed_sequence(seed, name, *index))


def child_seed(seed, name, *index):
    """A derived 63-bit integer seed, for APIs that take plain integers."""
    return int(seed_sequence(seed, name, *index).generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
