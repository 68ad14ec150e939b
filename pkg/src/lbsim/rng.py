"""Named random sub-streams derived from one master seed.

Each purpose (arrivals, services, policy sampling, ...) gets its own Philox
stream keyed by a fixed index, so extra draws in one place never shift the
numbers seen elsewhere.
"""

from __future__ import annotations

from itertools import chain

import numpy as np

STREAM_KEYS = {
    "arrivals": 0,
    "services": 1,
    "policy": 2,
    "tokens": 3,
    "reports": 4,
    "routing": 5,
}

_BLOCK = 8192


def generator(seed: int, name: str) -> np.random.Generator:
    if name not in STREAM_KEYS:
        raise KeyError(f"unknown stream {name!r}")
    ss = np.random.SeedSequence(seed, spawn_key=(STREAM_KEYS[name],))
    return np.random.Generator(np.random.Philox(ss))


class Stream:
    """Buffered scalar draws for hot loops.

    ``uniform()`` and ``exponential()`` are bound ``__next__`` methods of
    block-refilled iterators, which is far cheaper than one numpy call per
    draw.
    """

    def __init__(self, seed: int, name: str, block: int = _BLOCK):
        self.name = name
        self.gen = generator(seed, name)
        gen = self.gen
        self.uniform = chain.from_iterable(
            iter(lambda: gen.random(block).tolist(), None)).__next__
        self.exponential = chain.from_iterable(
            iter(lambda: gen.standard_exponential(block).tolist(), None)).__next__

    def below(self, n: int) -> int:
        return int(self.uniform() * n)


class Streams:
    def __init__(self, seed: int):
        self.seed = seed
        self._cache: dict[str, Stream] = {}

    def __getitem__(self, name: str) -> Stream:
        s = self._cache.get(name)
        if s is None:
            s = self._cache[name] = Stream(self.seed, name)
        return s
