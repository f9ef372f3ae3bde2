"""Named random substreams derived from a single root seed."""

import zlib

import numpy as np


def _key(part):
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part)


def substream(root_seed, *names):
    """Return a generator keyed by ``root_seed`` and a path of names/indices.

    Streams for different paths are statistically independent, so adding a
    draw in one component never shifts the numbers another component sees.
    """
    entropy = [int(root_seed)] + [_key(p) for p in names]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def derive_seed(root_seed, *names):
    """Integer seed for APIs that take a plain ``seed`` argument."""
    return int(substream(root_seed, *names).integers(0, 2**63 - 1))
