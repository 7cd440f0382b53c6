"""Seeded random number generation shared by the sampling services.

All randomness goes through numpy's PCG64 bit generator so samples are
bit-reproducible across platforms. Sub-seeds for chunks of work come from
``numpy.random.SeedSequence.spawn``: chunk k of a run seeded with s always
gets the k-th spawned child of SeedSequence(s), whatever the worker count.
"""
import numpy as np

GENERATOR_ID = 'numpy.PCG64'


def make_generator(seed):
    """Return a numpy Generator backed by PCG64 for an integer seed."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def split_seeds(seed, count):
    """
    Derive ``count`` independent 64-bit seeds from a master seed.

    Returns:
        list of Python ints, stable for a given (seed, count) prefix
    """
    children = np.random.SeedSequence(int(seed)).spawn(count)
    return [int(child.generate_state(1, dtype=np.uint64)[0]) for child in children]
