"""Index entries and their encoding.

Besides the three visible kinds (inline value, value location, tombstone) the
index stores RELOCATE entries: a conditional location update written by
segment-group GC, which never reads the index.  A RELOCATE moves a key from
``source`` to ``location`` only if the key's current entry is a LOCATION equal
to ``source``; otherwise it is void.  Reads and compactions fold RELOCATEs onto
the entry beneath them.
"""

from __future__ import annotations

import enum
import struct
from typing import NamedTuple, Optional

from ..record import Area, ValueLocation


class Kind(enum.IntEnum):
    INLINE = 0
    LOCATION = 1
    TOMBSTONE = 2
    RELOCATE = 3


class IndexEntry(NamedTuple):
    kind: int
    seq: int = 0
    value: bytes = b""
    location: Optional[ValueLocation] = None
    source: Optional[ValueLocation] = None

    @staticmethod
    def inline(value: bytes, seq: int = 0) -> "IndexEntry":
        return IndexEntry(Kind.INLINE, seq, value)

    @staticmethod
    def at(location: ValueLocation, seq: int = 0) -> "IndexEntry":
        return IndexEntry(Kind.LOCATION, seq, b"", location)

    @staticmethod
    def tombstone(seq: int = 0) -> "IndexEntry":
        return IndexEntry(Kind.TOMBSTONE, seq)

    @staticmethod
    def relocate(source: ValueLocation, target: ValueLocation, seq: int = 0) -> "IndexEntry":
        return IndexEntry(Kind.RELOCATE, seq, b"", target, source)


_HEAD = struct.Struct("<BBQ")  # key_len, kind, seq
_LOC = struct.Struct("<BQI")
_U32 = struct.Struct("<I")


def _pack_loc(loc: ValueLocation) -> bytes:
    return _LOC.pack(int(loc.area), loc.offset, loc.length)


def encode_entry(key: bytes, e: IndexEntry) -> bytes:
    head = _HEAD.pack(len(key), e.kind, e.seq) + key
    k = e.kind
    if k == Kind.LOCATION:
        return head + _pack_loc(e.location)
    if k == Kind.INLINE:
        return head + _U32.pack(len(e.value)) + e.value
    if k == Kind.TOMBSTONE:
        return head
    return head + _pack_loc(e.location) + _pack_loc(e.source)


def encoded_size(key: bytes, e: IndexEntry) -> int:
    base = _HEAD.size + len(key)
    k = e.kind
    if k == Kind.LOCATION:
        return base + _LOC.size
    if k == Kind.INLINE:
        return base + 4 + len(e.value)
    if k == Kind.TOMBSTONE:
        return base
    return base + 2 * _LOC.size


def decode_entry(buf, pos: int) -> tuple[bytes, IndexEntry, int]:
    klen, kind, seq = _HEAD.unpack_from(buf, pos)
    pos += _HEAD.size
    key = bytes(buf[pos:pos + klen])
    pos += klen
    if kind == Kind.LOCATION:
        a, off, ln = _LOC.unpack_from(buf, pos)
        return key, IndexEntry(kind, seq, b"", ValueLocation(Area(a), off, ln)), pos + _LOC.size
    if kind == Kind.INLINE:
        (vlen,) = _U32.unpack_from(buf, pos)
        pos += 4
        return key, IndexEntry(kind, seq, bytes(buf[pos:pos + vlen])), pos + vlen
    if kind == Kind.TOMBSTONE:
        return key, IndexEntry(kind, seq), pos
    if kind == Kind.RELOCATE:
        a, off, ln = _LOC.unpack_from(buf, pos)
        b, off2, ln2 = _LOC.unpack_from(buf, pos + _LOC.size)
        return (
            key,
            IndexEntry(kind, seq, b"", ValueLocation(Area(a), off, ln), ValueLocation(Area(b), off2, ln2)),
            pos + 2 * _LOC.size,
        )
    raise ValueError(f"unknown index entry kind {kind}")


def decode_key_at(buf, pos: int) -> bytes:
    klen = buf[pos]
    start = pos + _HEAD.size
    return bytes(buf[start:start + klen])


def apply(older: Optional[IndexEntry], newer: IndexEntry) -> Optional[IndexEntry]:
    """Fold ``newer`` on top of ``older`` (None = nothing known below)."""
    if newer.kind != Kind.RELOCATE:
        return newer
    if older is None:
        return newer
    if older.kind == Kind.LOCATION:
        if older.location == newer.source:
            return IndexEntry(Kind.LOCATION, newer.seq, b"", newer.location)
        return older
    if older.kind == Kind.RELOCATE and older.location == newer.source:
        return IndexEntry(Kind.RELOCATE, newer.seq, b"", newer.location, older.source)
    return older


def fold(newest_first: list) -> Optional[IndexEntry]:
    cur = None
    for e in reversed(newest_first):
        cur = apply(cur, e)
    return cur
