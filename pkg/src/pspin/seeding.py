"""Seed derivation for reproducible, order-independent parallel work."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

_MASK63 = (1 << 63) - 1


def derive_seed(*keys: int) -> int:
    """Map an integer key path such as ``(master_seed, k)`` to a 63-bit seed.

    Distinct key paths give statistically independent streams, so replica
    ``k`` gets the same seed no matter which worker runs it or when.
    """
    if not keys:
        raise ValueError("at least one key is required")
    words = [int(k) for k in keys]
    if any(w < 0 for w in words):
        raise ValueError("seed keys must be non-negative")
    state = np.random.SeedSequence(words).generate_state(2, dtype=np.uint32)
    return ((int(state[0]) << 32) | int(state[1])) & _MASK63


def rng(*keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(derive_seed(*keys)))


def random_seed() -> int:
    return int(np.random.SeedSequence().generate_state(1, dtype=np.uint64)[0]) & _MASK63


def parallel_map(fn, items, threads: int | None = 1) -> list:
    """``[fn(x) for x in items]`` on a thread pool; the result order is the input order."""
    items = list(items)
    if not threads or threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
