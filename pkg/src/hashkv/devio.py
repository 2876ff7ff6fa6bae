"""File I/O layer: every device write and sync in the store goes through here.

``DeviceIO`` counts bytes written per category (the device-write accounting
used for write amplification) and hosts the crash-injection hook that tests use
to stop the store at each sync boundary.
"""

from __future__ import annotations

import os
import threading
from collections import Counter
from typing import Callable, Optional

from .errors import SimulatedCrash

CATEGORIES = ("value", "lsm", "wal", "journal", "checkpoint")


class CrashInjector:
    """Counts crash points; raises SimulatedCrash when the armed index is reached."""

    def __init__(self, crash_at: Optional[int] = None):
        self.crash_at = crash_at
        self.count = 0
        self.labels: list[str] = []

    def __call__(self, label: str) -> None:
        self.count += 1
        self.labels.append(label)
        if self.crash_at is not None and self.count == self.crash_at:
            raise SimulatedCrash(label, self.count)


class DeviceIO:
    def __init__(self, fsync: bool = True, crash_hook: Optional[Callable[[str], None]] = None):
        self.fsync_enabled = fsync
        self.crash_hook = crash_hook
        self.written: Counter = Counter()
        self.read_bytes = 0
        self.write_calls = 0
        self.syncs = 0
        self._lock = threading.Lock()

    @property
    def total_written(self) -> int:
        return sum(self.written.values())

    def crash_point(self, label: str) -> None:
        if self.crash_hook is not None:
            self.crash_hook(label)

    def pwrite(self, fd: int, data, offset: int, category: str) -> None:
        n = os.pwrite(fd, data, offset)
        if n != len(data):
            # short writes are not expected on regular files; finish the job
            view = memoryview(data)
            while n < len(data):
                n += os.pwrite(fd, view[n:], offset + n)
        with self._lock:
            self.written[category] += len(data)
            self.write_calls += 1

    def torn_pwrite(self, fd: int, data, offset: int, category: str, label: str) -> None:
        """Write in two halves with a crash point between them (models a torn append)."""
        if self.crash_hook is None or len(data) < 2:
            self.pwrite(fd, data, offset, category)
            return
        half = len(data) // 2
        view = memoryview(data)
        self.pwrite(fd, view[:half], offset, category)
        self.crash_point(label + ":torn")
        self.pwrite(fd, view[half:], offset + half, category)

    def pread(self, fd: int, n: int, offset: int) -> bytes:
        data = os.pread(fd, n, offset)
        with self._lock:
            self.read_bytes += len(data)
        return data

    def sync(self, fd: int, label: str) -> None:
        self.crash_point(label + ":pre-sync")
        if self.fsync_enabled:
            os.fsync(fd)
        self.syncs += 1
        self.crash_point(label + ":synced")

    def write_file_atomic(self, path: str, data: bytes, category: str, label: str, sync: bool = True) -> None:
        """Write-temp, optional sync, rename."""
        tmp = path + ".tmp"
        fd = os.open(tmp, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o644)
        try:
            self.pwrite(fd, data, 0, category)
            if sync:
                self.sync(fd, label)
        finally:
            os.close(fd)
        self.crash_point(label + ":pre-rename")
        os.replace(tmp, path)
        if sync and self.fsync_enabled:
            dfd = os.open(os.path.dirname(path) or ".", os.O_RDONLY)
            try:
                os.fsync(dfd)
            finally:
                os.close(dfd)

    def snapshot(self) -> dict:
        return {
            "written": dict(self.written),
            "total_written": self.total_written,
            "read_bytes": self.read_bytes,
            "write_calls": self.write_calls,
            "syncs": self.syncs,
        }


def fadvise_willneed(fd: int, offset: int, length: int) -> None:
    if hasattr(os, "posix_fadvise"):
        os.posix_fadvise(fd, offset, length, os.POSIX_FADV_WILLNEED)


def fadvise_dontneed(fd: int) -> None:
    if hasattr(os, "posix_fadvise"):
        os.posix_fadvise(fd, 0, 0, os.POSIX_FADV_DONTNEED)
