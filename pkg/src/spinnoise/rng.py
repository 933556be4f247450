"""Keyed random streams for the sequence simulator.

Every draw in a simulated campaign comes from a Philox (counter-based)
generator whose 128-bit key is derived from

    SeedSequence(entropy=seed, spawn_key=(repetition, cycle, channel_index))

i.e. numpy's SeedSequence hash of the master seed and the stream coordinates.
A stream therefore depends only on its coordinates, never on the order in
which repetitions are executed.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidArgument

CHANNELS = (
    "loading",
    "loss",
    "thermal",
    "atomic_technical",
    "imbalance",
    "shot",
    "electronic",
    "dispersive",
    "imaging",
)

MAX_SEED = 2**64 - 1


def check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed <= MAX_SEED:
        raise InvalidArgument(f"seed must be an unsigned 64-bit integer, got {seed}", "seed")
    return seed


def stream_key(seed: int, repetition: int, cycle: int, channel: str) -> np.ndarray:
    ss = np.random.SeedSequence(
        entropy=check_seed(seed), spawn_key=(repetition, cycle, CHANNELS.index(channel))
    )
    return ss.generate_state(2, np.uint64)


def stream(seed: int, repetition: int, cycle: int, channel: str) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=stream_key(seed, repetition, cycle, channel)))
