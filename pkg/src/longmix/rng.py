"""Reproducible random-number streams.

Each (seed, stream_id) pair maps to an independent Philox counter-based
stream, so parallel chains and per-individual workers can draw without
coordination while staying bit-reproducible.
"""

from __future__ import annotations

import numpy as np


class RngStream:
    """A numpy Generator keyed by (seed, stream_id)."""

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self._bitgen = np.random.Philox(key=self._key(self.seed, self.stream_id))
        self.gen = np.random.Generator(self._bitgen)

    @staticmethod
    def _key(seed: int, stream_id: int) -> int:
        # Philox takes a 256-bit key; pack seed and stream into disjoint words.
        return (int(seed) & (2**64 - 1)) | ((int(stream_id) & (2**64 - 1)) << 64)

    def spawn(self, stream_id: int) -> "RngStream":
        return RngStream(self.seed, stream_id)

    # -- state capture for checkpointing ------------------------------------

    def get_state(self) -> dict:
        return self._bitgen.state

    def set_state(self, state: dict) -> None:
        self._bitgen.state = state

    # Convenience passthroughs so the stream can be used like a Generator.
    def __getattr__(self, name):
        return getattr(self.gen, name)
