"""Seed fan-out.

Every random draw in the toolkit comes from a generator keyed by
``(master_seed, stage, sequence, view, frame)``.  The key is fed to
:class:`numpy.random.SeedSequence` as the integer entropy list
``[master_seed, crc32(stage), sequence, view, frame]`` (negative indices
are shifted by ``2**32`` so that ``-1`` can mean "not applicable").
Because each task owns its own stream, rendering or corrupting frames in
any order or on any number of threads yields identical results.
"""

from __future__ import annotations

import zlib

import numpy as np

_NA = -1


def _entropy(master_seed: int, stage: str, sequence: int, view: int, frame: int) -> list[int]:
    parts = [int(master_seed), zlib.crc32(stage.encode("utf-8")), sequence, view, frame]
    return [p % (1 << 32) if p < 0 else p for p in parts]


def derive_seed(
    master_seed: int,
    stage: str,
    sequence: int = _NA,
    view: int = _NA,
    frame: int = _NA,
) -> int:
    """Return a 63-bit integer seed for one task."""
    ss = np.random.SeedSequence(_entropy(master_seed, stage, sequence, view, frame))
    hi, lo = ss.generate_state(2, dtype=np.uint32)
    return ((int(hi) << 32) | int(lo)) >> 1


def stream(
    master_seed: int,
    stage: str,
    sequence: int = _NA,
    view: int = _NA,
    frame: int = _NA,
) -> np.random.Generator:
    """Return a fresh generator for one task."""
    return np.random.default_rng(derive_seed(master_seed, stage, sequence, view, frame))


def as_generator(seed: int | np.random.Generator | None) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
