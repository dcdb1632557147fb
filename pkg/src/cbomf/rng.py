"""Counter-based random streams.

Every random draw in the package is addressed by ``(seed, stream, step)``:
``stream`` is a tuple of small integers naming the consumer (a replica, the
initial-law draw, a Picard sample cloud, ...) and ``step`` is the time-step
index.  A Philox generator is keyed from ``(seed, *stream)`` and its counter is
positioned at ``step``, so a block of normals never depends on which thread
asked for it or in which order blocks were requested.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")
R = TypeVar("R")

# stream tags; the second tuple entry is free for replica / sample indices
INIT = 1
NOISE = 2
PROBE = 3
PROJECTIONS = 4


def _key(seed: int, stream: Sequence[int]) -> np.ndarray:
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *map(int, stream)])
    return ss.generate_state(2, dtype=np.uint64)


def generator(seed: int, stream: Sequence[int] = (), step: int = 0) -> np.random.Generator:
    """Generator for substream ``stream`` positioned at counter block ``step``.

    Each step owns a disjoint 2**128 window of the Philox counter space.
    """
    counter = np.array([0, 0, int(step), 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=_key(seed, stream), counter=counter))


def normal_block(seed: int, stream: Sequence[int], step: int, shape) -> np.ndarray:
    """Standard normals for one time step of one substream.

    Row ``i`` of the block is the noise of particle ``i``; the block is
    generated whole, so chunked parallel consumers all see the same values.
    """
    return generator(seed, stream, step).standard_normal(shape)


def parallel_map(fn: Callable[[T], R], items: Iterable[T], threads: int = 1) -> list[R]:
    """Ordered map over ``items``; ``threads`` only changes wall-clock time."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
