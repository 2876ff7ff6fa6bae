"""Counters and the six-way flush/GC latency breakdown."""

from __future__ import annotations

import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass

BREAKDOWN = ("Cache", "Flush", "Meta-Flush", "GC-RW", "GC-Lookup", "Meta-GC")


class Timers:
    def __init__(self):
        self.totals = dict.fromkeys(BREAKDOWN, 0.0)

    def add(self, name: str, seconds: float) -> None:
        self.totals[name] += seconds

    @contextmanager
    def timed(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.totals[name] += time.perf_counter() - t0

    def percentages(self) -> dict:
        total = sum(self.totals.values())
        if total <= 0:
            return dict.fromkeys(BREAKDOWN, 0.0)
        return {k: 100.0 * v / total for k, v in self.totals.items()}

    def snapshot(self) -> dict:
        return dict(self.totals)


@dataclass
class GcStats:
    operations: int = 0
    bytes_scanned: int = 0
    records_scanned: int = 0
    bytes_rewritten: int = 0
    log_segments_freed: int = 0
    lsm_lookups: int = 0
    index_updates: int = 0
    cold_bytes_moved: int = 0

    def add(self, other: "GcStats") -> None:
        for k, v in asdict(other).items():
            setattr(self, k, getattr(self, k) + v)

    def as_dict(self) -> dict:
        return asdict(self)
