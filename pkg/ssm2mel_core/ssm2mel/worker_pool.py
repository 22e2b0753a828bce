"""
Thread fan-out for per-crop gradients and per-recording evaluation.

Results always come back in submission order, so reductions over them are
independent of the worker count.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Iterable, List, Optional

import psutil

from .errors import ConfigError

logger = logging.getLogger(__name__)


def max_workers() -> int:
    return psutil.cpu_count(logical=True) or 1


def resolve_workers(requested: int) -> int:
    """Validate a --workers value against the machine; oversubscription is clamped."""
    if requested < 1:
        raise ConfigError(f"invalid config key 'workers': must be >= 1, got {requested}")
    limit = max_workers()
    if requested > limit:
        logger.warning(f"Requested {requested} workers but only {limit} CPUs are available; using {limit}")
        return limit
    return requested


class WorkerPool:
    """
    Ordered map over a thread pool; one worker runs everything inline.
    """

    def __init__(self, workers: int = 1):
        self.workers = resolve_workers(workers)
        self.executor: Optional[ThreadPoolExecutor] = (
            ThreadPoolExecutor(max_workers=self.workers, thread_name_prefix="ssm2mel")
            if self.workers > 1 else None
        )

    def __enter__(self) -> "WorkerPool":
        return self

    def __exit__(self, *exc_info) -> bool:
        self.close()
        return False

    def close(self) -> None:
        if self.executor is not None:
            self.executor.shutdown(wait=True)
            self.executor = None

    def map(self, fn: Callable[[Any], Any], items: Iterable[Any]) -> List[Any]:
        items = list(items)
        if self.executor is None or len(items) < 2:
            return [fn(item) for item in items]
        futures = [self.executor.submit(fn, item) for item in items]
        # first failure in submission order wins
        return [future.result() for future in futures]
