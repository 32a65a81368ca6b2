"""Named random substreams derived from one master seed."""

from __future__ import annotations

import zlib

import numpy as np


def substream(seed, *names):
    """Generator for ``(seed, name, ...)``; ints in ``names`` index workers or repeats."""
    key = tuple(n if isinstance(n, int) else zlib.crc32(str(n).encode()) for n in names)
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=key))


def categorical(rng, probs):
    """One draw per row of ``probs`` (rows sum to 1)."""
    probs = np.asarray(probs, dtype=float)
    u = rng.random(probs.shape[0])
    c = np.cumsum(probs, axis=1)
    c /= c[:, -1:]
    return np.minimum((u[:, None] >= c).sum(axis=1), probs.shape[1] - 1)
