"""Deterministic, splittable random streams.

Every random draw in the engine comes from a generator keyed by
``(seed, *path)`` through :class:`numpy.random.SeedSequence` spawn keys, so
a stream never depends on how work is scheduled.  Monte Carlo scenarios are
grouped in fixed-size blocks; each block owns one stream.  Workers receive
whole blocks, which keeps results identical for any worker or chunk count.
"""

from __future__ import annotations

import zlib
from typing import Iterator

import numpy as np

BLOCK_SIZE = 4096


def _key(part: int | str) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    if part < 0:
        raise ValueError("stream path components must be non-negative")
    return int(part)


def stream(seed: int, *path: int | str) -> np.random.Generator:
    """Return the generator for ``path`` under ``seed``.

    >>> a = stream(7, "sums").standard_normal()
    >>> b = stream(7, "sums").standard_normal()
    >>> a == b
    True
    """
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(p) for p in path))
    return np.random.Generator(np.random.PCG64(seq))


def blocks(n_scenarios: int, block_size: int = BLOCK_SIZE) -> list[tuple[int, int, int]]:
    """Split ``n_scenarios`` into ``(block_index, start, stop)`` triples."""
    if n_scenarios < 1:
        raise ValueError("n_scenarios must be >= 1")
    out = []
    for i, start in enumerate(range(0, n_scenarios, block_size)):
        out.append((i, start, min(start + block_size, n_scenarios)))
    return out


def partition(items: list, n_parts: int) -> Iterator[list]:
    """Contiguous near-equal partition of ``items`` into at most ``n_parts`` lists."""
    n_parts = max(1, min(n_parts, len(items)))
    size, extra = divmod(len(items), n_parts)
    pos = 0
    for i in range(n_parts):
        step = size + (1 if i < extra else 0)
        yield items[pos:pos + step]
        pos += step
