"""Named random sub-streams derived from one run seed."""

import zlib

import numpy as np

STREAM_INIT = "init"
STREAM_SHUFFLE = "shuffle"
STREAM_NEGATIVES = "negatives"
STREAM_SYNTH = "synth"


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for component `name`, fully determined by (seed, name)."""
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(key,)))
