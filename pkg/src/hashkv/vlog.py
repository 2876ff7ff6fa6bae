"""Circular value log baseline: append at the head, reclaim from the tail with index lookups."""

from __future__ import annotations

import os
from typing import Callable, Optional

from .devio import DeviceIO
from .errors import InvalidLocation
from .lsm.entry import Kind
from .metrics import GcStats
from .record import HEADER_SIZE, Area, KVRecord, ValueLocation
from .segments import CircularLog

# (key) -> current index entry, or None
Lookup = Callable[[bytes], Optional[object]]


class VLogStore:
    def __init__(self, path: str, size: int, chunk_bytes: int, io: DeviceIO):
        self.path = path
        self.io = io
        self.chunk_bytes = chunk_bytes
        self.fd = os.open(path, os.O_RDWR | os.O_CREAT, 0o644)
        if os.fstat(self.fd).st_size < size:
            os.ftruncate(self.fd, size)
        self.log = CircularLog(self.fd, 0, size, io, Area.VLOG)

    @property
    def head(self) -> int:
        return self.log.head

    @property
    def tail(self) -> int:
        return self.log.tail

    @property
    def size(self) -> int:
        return self.log.size

    @property
    def free(self) -> int:
        return self.log.free

    def space_for(self, sizes) -> int:
        return self.log.space_for(sizes)

    def place(self, blobs: list):
        return self.log.place(blobs)

    def write_runs(self, runs) -> None:
        self.log.write_runs(runs)

    def append(self, blobs: list) -> list:
        return self.log.append(blobs)

    def read(self, loc: ValueLocation) -> KVRecord:
        if loc.area != Area.VLOG:
            raise InvalidLocation(f"not a vlog location: {loc}")
        return self.log.read(loc)

    def physical(self, loc: ValueLocation) -> int:
        return self.log.physical(loc)

    def collect_chunk(self, lookup: Lookup, stats: GcStats):
        """Read one chunk from the tail and sort its records into valid / invalid.

        Returns ``(valid [(key, old location, record bytes)], new tail)``.
        Every record costs one index lookup.
        """
        return collect_chunk(self.log, self.chunk_bytes, lookup, stats)

    def sync(self, label: str = "vlog") -> None:
        self.io.sync(self.fd, label)

    def close(self) -> None:
        if self.fd >= 0:
            os.close(self.fd)
            self.fd = -1


def collect_chunk(log: CircularLog, chunk_bytes: int, lookup: Lookup, stats: GcStats):
    records, new_tail = log.read_chunk(chunk_bytes)
    valid = []
    for off, data in records:
        ksz = data[1]
        key = bytes(data[HEADER_SIZE:HEADER_SIZE + ksz])
        stats.records_scanned += 1
        stats.bytes_scanned += len(data)
        stats.lsm_lookups += 1
        e = lookup(key)
        if (e is not None and e.kind == Kind.LOCATION and e.location.area == log.area
                and e.location.offset == off):
            valid.append((key, ValueLocation(log.area, off, len(data)), data))
    return valid, new_tail
