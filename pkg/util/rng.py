"""Addressable random streams.

Every stochastic routine receives a ``Stream``. A stream is identified by a
master seed and a key tuple; the key selects an independent Philox
(counter-based) generator, so any (task, unit, iteration) sub-stream can be
reconstructed without replaying the draws that precede it. This is what
makes results independent of how tasks are spread over worker processes.
"""
import hashlib

import numpy as np
import torch


def _key_word(k):
    if isinstance(k, (bool, np.bool_)):
        return int(k)
    if isinstance(k, (int, np.integer)):
        if k < 0:
            raise ValueError("stream key components must be nonnegative, got {}".format(k))
        return int(k)
    if isinstance(k, str):
        return int.from_bytes(hashlib.blake2b(k.encode("utf-8"), digest_size=8).digest(), "little")
    raise TypeError("stream key components must be int or str, got {!r}".format(k))


class Stream(object):
    def __init__(self, seed, key=()):
        if seed is None:
            raise ValueError("a seed is required for stochastic computations")
        self.seed = int(seed)
        self.key = tuple(key)
        self._generator = None

    @property
    def generator(self):
        if self._generator is None:
            ss = np.random.SeedSequence(self.seed, spawn_key=tuple(_key_word(k) for k in self.key))
            self._generator = np.random.Generator(np.random.Philox(ss))
        return self._generator

    def spawn(self, *key):
        return Stream(self.seed, self.key + tuple(key))

    def normal(self, shape):
        return torch.from_numpy(self.generator.standard_normal(shape))

    def uniform(self, shape):
        return torch.from_numpy(self.generator.random(shape))

    def __getstate__(self):
        return {"seed": self.seed, "key": self.key}

    def __setstate__(self, state):
        self.seed = state["seed"]
        self.key = state["key"]
        self._generator = None

    def __eq__(self, other):
        return isinstance(other, Stream) and (self.seed, self.key) == (other.seed, other.key)

    def __hash__(self):
        return hash((self.seed, self.key))

    def __repr__(self):
        return "Stream(seed={}, key={!r})".format(self.seed, self.key)


def as_stream(rng):
    if isinstance(rng, Stream):
        return rng
    return Stream(rng)
