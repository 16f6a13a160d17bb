"""Replica plumbing: seeded substreams, fixed batch decomposition, batch-means errors.

Work is always split into ``N_BATCHES`` batches whose sizes depend only on the
replica count. Each batch owns a random stream derived from the master seed and
the batch index, so results do not depend on how batches are scheduled.
"""

from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

N_BATCHES = 32


def _tag(label: str | int) -> int:
    return label if isinstance(label, int) else zlib.crc32(label.encode())


def substream(seed: int, *key: str | int) -> np.random.Generator:
    """Independent generator for ``(seed, key...)``; string keys are hashed stably."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_tag(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def batch_bounds(n: int, n_batches: int = N_BATCHES) -> list[tuple[int, int]]:
    """``(start, stop)`` of each non-empty batch; sizes differ by at most one."""
    if n < 0:
        raise ValueError("replica count must be nonnegative")
    edges = np.linspace(0, n, min(n_batches, max(n, 1)) + 1).round().astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def map_batches(fn: Callable[[int, int, int], object], n: int, workers: int = 1, n_batches: int = N_BATCHES) -> list:
    """Apply ``fn(batch_index, start, stop)`` to every batch; results come back in batch order."""
    bounds = batch_bounds(n, n_batches)
    if workers <= 1 or len(bounds) <= 1:
        return [fn(b, lo, hi) for b, (lo, hi) in enumerate(bounds)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, b, lo, hi) for b, (lo, hi) in enumerate(bounds)]
        return [f.result() for f in futures]


@dataclass(frozen=True)
class EstimateWithError:
    estimate: float
    se: float
    n: int
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.se >= 0:
            raise ValueError(f"standard error must be nonnegative, got {self.se}")

    def within(self, target: float, k: float = 3.0, floor: float = 0.0) -> bool:
        return abs(self.estimate - target) <= k * max(self.se, floor)


def batch_se(batch_values: Sequence[float] | np.ndarray, weights: Sequence[float] | np.ndarray | None = None) -> float:
    """Standard error of the weighted mean of batch estimates."""
    vals = np.asarray(batch_values, dtype=float)
    if vals.shape[0] < 2:
        return 0.0
    w = np.ones(vals.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    w = w / w.sum()
    mean = np.tensordot(w, vals, axes=1)
    dev = vals - mean
    # weighted batch-means variance, reduces to var(ddof=1)/B for equal weights
    var = np.tensordot(w**2, dev**2, axes=1) * vals.shape[0] / (vals.shape[0] - 1)
    return np.sqrt(var)


def batch_estimate(batch_means: Sequence[float], batch_sizes: Sequence[int], flags: tuple[str, ...] = ()) -> EstimateWithError:
    sizes = np.asarray(batch_sizes, dtype=float)
    means = np.asarray(batch_means, dtype=float)
    est = float(np.dot(sizes, means) / sizes.sum())
    return EstimateWithError(est, float(batch_se(means, sizes)), int(sizes.sum()), flags)
