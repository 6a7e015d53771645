"""Deterministic seed derivation and an order-preserving parallel map.

Every random draw in the package flows from a single master seed.  A stage
obtains its own generator with ``stage_rng(master, "simulate", 3, 7)``: the
stage name and any integer keys are hashed (CRC32, stable across processes
and Python versions) into the spawn key of a :class:`numpy.random.SeedSequence`.
"""

from __future__ import annotations

import zlib
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Sequence

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode("utf-8"))


def derive_seed(master: int, *parts) -> int:
    """Return a 63-bit integer seed for the stage identified by ``parts``."""
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(_key(p) for p in parts))
    hi, lo = (int(v) for v in ss.generate_state(2, dtype=np.uint32))
    return (hi << 31) ^ lo


def stage_rng(master: int, *parts) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *parts))


def parallel_map(fn: Callable, items: Iterable, workers: int = 1) -> list:
    """``list(map(fn, items))``, optionally across processes.

    Results come back in input order, so output never depends on ``workers``.
    ``fn`` must be a module-level callable when ``workers > 1``.
    """
    items: Sequence = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
