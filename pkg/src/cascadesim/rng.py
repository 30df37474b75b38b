"""Seedable, splittable random streams for reproducible simulations.

One Philox4x64 counter-based generator per world. Independent streams are
carved out of the 256-bit counter space: a stream address is the 128-bit
blake2b digest of its (tag, a, b) path placed in the two high counter words,
leaving 2^128 draws of headroom per stream. Draw sequences therefore depend
only on (seed, path), never on how many draws other streams consumed.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

ALGORITHM = "philox4x64/counter-partitioned/blake2b-paths"

# Stream tags. Keep stable: they are part of the reproducibility contract.
TAG_SHUFFLE = 1
TAG_AGENT = 2
TAG_PERSONA = 3
TAG_SAMPLE = 4
TAG_NETWORK = 5

_PACK = struct.Struct("<3q").pack
_UNPACK2 = struct.Struct("<2Q").unpack


class SplitRng:
    """Deterministic stream factory over a single seeded Philox generator.

    ``stream(...)`` repositions the shared bit generator, so the returned
    Generator is valid only until the next ``stream``/``fresh_stream`` call
    on this object. Use ``fresh_stream`` when two streams must live at once.
    """

    def __init__(self, seed: int):
        self._bitgen = np.random.Philox(key=0)
        self._template = self._bitgen.state
        self._counter = np.zeros(4, dtype=np.uint64)
        self._template["state"]["counter"] = self._counter
        self._gen = np.random.Generator(self._bitgen)
        self.reseed(seed)

    def reseed(self, seed: int) -> None:
        """Repoint every stream at a new seed without rebuilding the generator."""

        self.seed = int(seed) & (2**64 - 1)
        self._key = np.frombuffer(
            hashlib.blake2b(self.seed.to_bytes(8, "little"), digest_size=16).digest(),
            dtype=np.uint64,
        ).copy()
        self._template["state"]["key"] = self._key

    def stream(self, tag: int, a: int = 0, b: int = 0) -> np.random.Generator:
        digest = hashlib.blake2b(_PACK(tag, a, b), digest_size=16).digest()
        lo, hi = _UNPACK2(digest)
        counter = self._counter
        counter[2] = lo
        counter[3] = hi
        st = self._template
        st["buffer_pos"] = 4
        st["has_uint32"] = 0
        self._bitgen.state = st
        return self._gen

    def fresh_stream(self, tag: int, a: int = 0, b: int = 0) -> np.random.Generator:
        digest = hashlib.blake2b(_PACK(tag, a, b), digest_size=16).digest()
        counter = np.zeros(4, dtype=np.uint64)
        counter[2:] = np.frombuffer(digest, dtype=np.uint64)
        return np.random.Generator(np.random.Philox(counter=counter, key=self._key))
