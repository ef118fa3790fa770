"""Hierarchical seeding.

Every random draw is taken from a generator keyed by ``(root_seed, *path)``, so
adding a turn, an episode or a branch never shifts the draws of its siblings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Purpose codes appended to a turn key.
POLICY = 0
GENERATE = 1
REVIEW = 2
GENERATE_ALT = 3
REVIEW_ALT = 4


def substream(seed: int, *path: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path)))


@dataclass(frozen=True)
class Stream:
    seed: int
    path: tuple[int, ...] = ()

    def child(self, *key: int) -> Stream:
        return Stream(self.seed, self.path + tuple(int(k) for k in key))

    def generator(self, *key: int) -> np.random.Generator:
        return substream(self.seed, *self.path, *key)

    @property
    def tag(self) -> str:
        return "-".join(str(p) for p in (self.seed, *self.path))


def as_stream(rng: int | Stream) -> Stream:
    return rng if isinstance(rng, Stream) else Stream(int(rng))
