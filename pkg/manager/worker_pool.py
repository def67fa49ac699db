import os
import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Dict, Iterable, List, Optional, TypeVar

import numpy as np
import psutil

from common.errors import ConfigurationError
from manager.settings import setting

logger = logging.getLogger("isopsm")

T = TypeVar("T")
R = TypeVar("R")

THREADS_ENV = "ISOPSM_THREADS"


def available_cores() -> int:
    return psutil.cpu_count(logical=False) or psutil.cpu_count() or 1


def _env_cap() -> Optional[int]:
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw.strip() == "":
        return None
    try:
        cap = int(raw)
    except ValueError:
        raise ConfigurationError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    if cap < 1:
        raise ConfigurationError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return cap


def resolve_workers(requested: Optional[int] = None) -> int:
    """
    Worker count: the request, else the configured maximum, else all physical
    cores; always capped by ISOPSM_THREADS.
    """
    workers = requested or setting("workers", "max", 0) or available_cores()
    if workers < 1:
        raise ConfigurationError(f"worker count must be positive, got {workers}")
    cap = _env_cap()
    if cap is not None:
        workers = min(workers, cap)
    return int(workers)


def map_ordered(fn: Callable[[T], R], items: Iterable[T], workers: Optional[int] = None,
                chunksize: Optional[int] = None) -> List[R]:
    """
    Apply `fn` to every item and return results in input order.

    Runs in-process for a single worker; otherwise `fn` and the items must be
    picklable. Task results never depend on the worker that ran them.
    """
    items = list(items)
    workers = min(resolve_workers(workers), max(len(items), 1))
    if workers <= 1:
        return [fn(item) for item in items]

    if chunksize is None:
        chunksize = max(1, len(items) // (workers * 4))
    logger.info(f"Dispatching {len(items)} tasks to {workers} worker processes")
    with ProcessPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(fn, items, chunksize=chunksize))


def memory_usage_mb() -> float:
    """Resident memory of this process and its live children, in MB."""
    process = psutil.Process()
    total = process.memory_info().rss
    for child in process.children(recursive=True):
        try:
            total += child.memory_info().rss
        except psutil.NoSuchProcess:
            continue
    return total / (2**20)


def pool_status(requested: Optional[int] = None) -> Dict[str, object]:
    """
    Return worker pool sizing for report metadata.
    """
    return {
        'physical_cores': psutil.cpu_count(logical=False),
        'logical_cores': psutil.cpu_count(),
        'thread_cap': _env_cap(),
        'workers': resolve_workers(requested),
    }


def task_rng(*keys: int) -> np.random.Generator:
    """Philox counter-based generator keyed by non-negative integers; identical in every process."""
    if any(int(k) < 0 for k in keys):
        raise ConfigurationError(f"stream keys must be non-negative, got {keys}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in keys])))
