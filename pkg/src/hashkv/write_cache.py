"""In-memory write cache with in-place updates and group-batched flush planning."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .errors import InvalidArgument
from .record import HEADER_SIZE

TOMBSTONE = None  # cached deletes are stored as None
_MISS = object()


def pair_size(key: bytes, value: Optional[bytes]) -> int:
    return HEADER_SIZE + len(key) + (0 if value is None else len(value))


class WriteCache:
    """key -> value bytes, or ``None`` for a cached delete.

    ``put`` reports when the cache has grown past its capacity; the owner then
    flushes everything (eviction is all-or-nothing).  A capacity of 0 disables
    caching: every put asks for an immediate flush of that single entry.
    """

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.entries: dict[bytes, Optional[bytes]] = {}
        self.size = 0

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, key: bytes) -> bool:
        return key in self.entries

    def put(self, key: bytes, value: Optional[bytes]) -> bool:
        """Insert or overwrite in place. Returns True when a flush is needed."""
        n = pair_size(key, value)
        if self.capacity and n > self.capacity:
            raise InvalidArgument(f"pair of {n} bytes exceeds write cache capacity {self.capacity}")
        old = self.entries.get(key, _MISS)
        if old is not _MISS:
            self.size -= pair_size(key, old)
        self.entries[key] = value
        self.size += n
        return self.size > self.capacity

    def get(self, key: bytes):
        """The cached value, ``None`` for a cached delete, or the module-level ``MISS`` sentinel."""
        return self.entries.get(key, _MISS)

    def clear(self) -> None:
        self.entries = {}
        self.size = 0

    def sorted_items(self, start: Optional[bytes] = None, end: Optional[bytes] = None) -> list:
        keys = sorted(k for k in self.entries if (start is None or k >= start) and (end is None or k < end))
        return [(k, self.entries[k]) for k in keys]


MISS = _MISS


@dataclass
class FlushBatch:
    group: int
    records: list = field(default_factory=list)
    nbytes: int = 0


def batch_ends(sizes: list[int], threshold: int) -> list[int]:
    """Exclusive end indices of the batches that ``make_batches`` would form."""
    ends = []
    acc = 0
    for i, n in enumerate(sizes):
        if n >= threshold and acc:
            ends.append(i)
            acc = 0
        acc += n
        if acc >= threshold:
            ends.append(i + 1)
            acc = 0
    if acc:
        ends.append(len(sizes))
    return ends


def make_batches(group: int, blobs: list, threshold: int) -> list[FlushBatch]:
    """Pack encoded records, in order, into batches of at least ``threshold`` bytes.

    The last batch may be smaller.  A record larger than the threshold ends up
    alone in its own batch.
    """
    out = []
    start = 0
    for end in batch_ends([len(b) for b in blobs], threshold):
        recs = blobs[start:end]
        out.append(FlushBatch(group, recs, sum(len(b) for b in recs)))
        start = end
    return out
