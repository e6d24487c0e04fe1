"""Chunked all-pairs reduction engine with a shared worker pool.

Targets are split into fixed-size chunks; each chunk is reduced over the full
source list in source index order. Chunk boundaries do not depend on the number
of workers, so results are bit-identical for any parallelism degree.
"""

from concurrent.futures import ThreadPoolExecutor
from threading import Lock
from typing import Callable, Optional

import numpy as np

from src.config import DEFAULT_THREADS, KERNEL_CHUNK_SIZE
from src.logger import get_logger

logger = get_logger(__name__)

# Global worker pool shared by all kernel sums
_executor: Optional[ThreadPoolExecutor] = None
_worker_count: int = max(1, DEFAULT_THREADS)
_executor_lock = Lock()

PairTerm = Callable[[np.ndarray, Optional[np.ndarray], slice], np.ndarray]


def set_worker_count(workers: int) -> None:
    """Set the parallelism degree of kernel sums, recreating the pool if needed."""
    global _executor, _worker_count
    if workers < 1:
        raise ValueError(f"threads must be at least 1, got {workers}")
    with _executor_lock:
        if workers != _worker_count and _executor is not None:
            _executor.shutdown(wait=True)
            _executor = None
        _worker_count = workers
    logger.debug(f"Kernel worker count set to {workers}")


def get_worker_count() -> int:
    return _worker_count


def get_executor() -> ThreadPoolExecutor:
    """Get or create the kernel worker pool."""
    global _executor
    with _executor_lock:
        if _executor is None:
            _executor = ThreadPoolExecutor(
                max_workers=_worker_count, thread_name_prefix="kernel"
            )
            logger.debug(f"Kernel worker pool created with {_worker_count} workers")
        return _executor


def self_mask(
    self_index: Optional[np.ndarray], rows: slice, n_sources: int
) -> Optional[np.ndarray]:
    """0/1 mask of shape (rows, n_sources) removing each target's own source."""
    if self_index is None:
        return None
    cols = np.asarray(self_index[rows])
    keep = np.ones((cols.shape[0], n_sources))
    valid = cols >= 0
    keep[np.nonzero(valid)[0], cols[valid]] = 0.0
    return keep


def pair_reduce(
    targets: np.ndarray,
    sources: np.ndarray,
    term: PairTerm,
    self_index: Optional[np.ndarray] = None,
    chunk_size: int = KERNEL_CHUNK_SIZE,
) -> np.ndarray:
    """Sum a pair term over all sources for every target.

    Args:
        targets: Evaluation points, shape (M, 3)
        sources: Source positions, shape (N, 3)
        term: Called as term(diff, keep, rows) with diff = x_target - x_source of
            shape (m, 3, N), keep the self-exclusion mask or None, and rows the
            target slice; returns an array whose last axis runs over sources
        self_index: For each target the index of the source to exclude, or -1
        chunk_size: Number of targets per block

    Returns:
        The per-target sums, shape (M, ...)
    """
    targets = np.asarray(targets, dtype=float).reshape(-1, 3)
    sources = np.asarray(sources, dtype=float).reshape(-1, 3)
    n_targets = targets.shape[0]
    sources_t = np.ascontiguousarray(sources.T)

    def run(start: int, stop: int) -> np.ndarray:
        rows = slice(start, stop)
        diff = targets[rows, :, None] - sources_t[None, :, :]
        keep = self_mask(self_index, rows, sources.shape[0])
        return term(diff, keep, rows).sum(axis=-1)

    bounds = [
        (start, min(start + chunk_size, n_targets))
        for start in range(0, n_targets, chunk_size)
    ] or [(0, 0)]

    if _worker_count > 1 and len(bounds) > 1:
        results = list(get_executor().map(lambda b: run(*b), bounds))
    else:
        results = [run(*b) for b in bounds]
    return np.concatenate(results, axis=0)
