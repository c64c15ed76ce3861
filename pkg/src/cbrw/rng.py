"""Deterministic random streams.

A stream is identified by ``(master_seed, domain, index)``.  The triple is
fed to :class:`numpy.random.SeedSequence` as ``entropy=master_seed`` and
``spawn_key=(domain, index)``; the resulting seed material keys a Philox
counter-based generator.  Streams for distinct keys are statistically
independent, and the same key always reproduces the same draws.
"""
import numpy as np

# domain tags, never renumber
TABOO = 1
SIMULATION = 2
PATHS = 3
IDENTITY = 4
MISC = 9


def stream(master_seed, domain=MISC, index=0):
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(domain), int(index)))
    return np.random.Generator(np.random.Philox(ss))


def as_generator(rng):
    """Accept a Generator, an int seed or None."""
    if isinstance(rng, np.random.Generator):
        return rng
    return stream(0 if rng is None else rng)
