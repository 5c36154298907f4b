"""Named random substreams derived from a single 64-bit seed.

Every source of randomness in a run (environment resets, ensemble
bootstraps, policy initialization, batch sampling, rollout noise) pulls
from its own named stream so components can be reseeded independently
without perturbing the others.
"""

from __future__ import annotations

import zlib

import numpy as np


def substream(seed: int, name: str) -> np.random.Generator:
    """Return a generator for the (seed, name) pair.

    The same pair always yields the same stream; distinct names yield
    statistically independent streams (SeedSequence keying).
    """
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, key]))


class StreamBundle:
    """Lazily created named substreams hanging off one root seed."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._streams: dict[str, np.random.Generator] = {}

    def get(self, name: str) -> np.random.Generator:
        if name not in self._streams:
            self._streams[name] = substream(self.seed, name)
        return self._streams[name]
