"""
Resource snapshots for run logs and the selftest report.
"""

import logging
import os
import time
from dataclasses import dataclass
from typing import List

import psutil

logger = logging.getLogger(__name__)


@dataclass
class ResourceSnapshot:
    label: str
    elapsed: float
    cpu_count: int
    rss_mb: float
    available_mb: float

    def describe(self) -> str:
        return (f"{self.label}: {self.elapsed:.2f}s elapsed, rss {self.rss_mb:.1f} MB, "
                f"{self.available_mb:.0f} MB available, {self.cpu_count} CPUs")


class ResourceMonitor:
    """Wall-clock and memory tracker for one process."""

    def __init__(self):
        self.start_time = time.time()
        self.process = psutil.Process(os.getpid())
        self.history: List[ResourceSnapshot] = []
        self.max_history_size = 100

    def snapshot(self, label: str = "now") -> ResourceSnapshot:
        try:
            rss = self.process.memory_info().rss / 1024 / 1024
            available = psutil.virtual_memory().available / 1024 / 1024
        except psutil.Error as e:
            logger.warning(f"Resource snapshot failed: {e}")
            rss, available = float("nan"), float("nan")
        snap = ResourceSnapshot(
            label=label,
            elapsed=time.time() - self.start_time,
            cpu_count=psutil.cpu_count(logical=True) or 1,
            rss_mb=rss,
            available_mb=available,
        )
        self.history.append(snap)
        if len(self.history) > self.max_history_size:
            self.history = self.history[-self.max_history_size:]
        return snap

    def log(self, label: str) -> ResourceSnapshot:
        snap = self.snapshot(label)
        logger.info(snap.describe())
        return snap
