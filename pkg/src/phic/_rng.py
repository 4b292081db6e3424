"""Seed derivation: every random stream is a function of (seed, stage, index...)."""

import zlib

import numpy as np


def stage_key(stage: str) -> int:
    return zlib.crc32(stage.encode("utf-8"))


def derive_seed(seed: int, stage: str, *index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), stage_key(stage), *(int(i) for i in index)])


def derive_rng(seed: int, stage: str, *index: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, stage, *index))


def derive_int(seed: int, stage: str, *index: int) -> int:
    """A 31-bit integer seed, for components that take a plain int."""
    return int(derive_seed(seed, stage, *index).generate_state(1)[0] & 0x7FFFFFFF)
