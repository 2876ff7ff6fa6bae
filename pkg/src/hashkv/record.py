"""On-disk KV record encoding and the key-to-group hash.

Record layout (little-endian)::

    [flags:u8][key_size:u8][reserved:u16 = 0][value_size:u32][key][value]

A header whose ``key_size`` is zero never starts a real record, so zero bytes
(fresh file space, a stamped-free segment, or an explicit terminator) mark the
end of live data when scanning.
"""

from __future__ import annotations

import enum
import struct
from typing import Iterator, NamedTuple

from .errors import CorruptRecord, InvalidArgument

HEADER = struct.Struct("<BBHI")
HEADER_SIZE = HEADER.size  # 8
TERMINATOR = bytes(HEADER_SIZE)

FLAG_TOMBSTONE = 0x01
FLAG_COLD = 0x02

MAX_KEY_SIZE = 255
MAX_VALUE_SIZE = (1 << 32) - 1

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


class Area(enum.IntEnum):
    SEGMENT = 0
    COLD = 1
    VLOG = 2


class ValueLocation(NamedTuple):
    area: Area
    offset: int
    length: int


class KVRecord(NamedTuple):
    flags: int
    key: bytes
    value: bytes

    @property
    def is_tombstone(self) -> bool:
        return bool(self.flags & FLAG_TOMBSTONE)

    @property
    def is_cold_tag(self) -> bool:
        return bool(self.flags & FLAG_COLD)

    @property
    def encoded_size(self) -> int:
        return HEADER_SIZE + len(self.key) + len(self.value)


def record_size(key_len: int, value_len: int) -> int:
    return HEADER_SIZE + key_len + value_len


def encode_record(flags: int, key: bytes, value: bytes = b"") -> bytes:
    if not 1 <= len(key) <= MAX_KEY_SIZE:
        raise InvalidArgument(f"key length {len(key)} outside [1, {MAX_KEY_SIZE}]")
    if len(value) > MAX_VALUE_SIZE:
        raise InvalidArgument("value too long")
    if flags & ~0xFF:
        raise InvalidArgument("flags must fit in one byte")
    return HEADER.pack(flags, len(key), 0, len(value)) + key + value


def decode_record(buf, at: int = 0) -> tuple[KVRecord, int]:
    """Decode one record at ``at``; returns the record and its encoded length."""
    if len(buf) - at < HEADER_SIZE:
        raise CorruptRecord(f"truncated header at offset {at}")
    flags, ksz, _reserved, vsz = HEADER.unpack_from(buf, at)
    if ksz == 0:
        raise CorruptRecord(f"zero key size at offset {at} (end of data)")
    end = at + HEADER_SIZE + ksz + vsz
    if end > len(buf):
        raise CorruptRecord(f"record at offset {at} runs past buffer end")
    kstart = at + HEADER_SIZE
    key = bytes(buf[kstart:kstart + ksz])
    value = bytes(buf[kstart + ksz:end])
    return KVRecord(flags, key, value), end - at


def iter_records(buf, start: int = 0, limit: int | None = None) -> Iterator[tuple[int, int, bytes, int]]:
    """Yield ``(offset, flags, key, length)`` for each record until the end-of-data sentinel.

    Stops silently at a zero header or when fewer than a header's worth of
    bytes remain; raises CorruptRecord if a header claims more bytes than exist.
    """
    n = len(buf) if limit is None else min(limit, len(buf))
    pos = start
    unpack = HEADER.unpack_from
    while n - pos >= HEADER_SIZE:
        flags, ksz, _r, vsz = unpack(buf, pos)
        if ksz == 0:
            return
        length = HEADER_SIZE + ksz + vsz
        if pos + length > n:
            raise CorruptRecord(f"record at offset {pos} runs past region end {n}")
        yield pos, flags, bytes(buf[pos + HEADER_SIZE:pos + HEADER_SIZE + ksz]), length
        pos += length


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & _MASK64
    return h


def hash_group(key: bytes, n_main: int) -> int:
    if n_main < 1:
        raise InvalidArgument("n_main must be >= 1")
    return fnv1a_64(key) % n_main


def fnv1a_64_many(keys):
    """Vectorised FNV-1a over an (N, L) uint8 array of equal-length keys."""
    import numpy as np

    arr = np.asarray(keys, dtype=np.uint8)
    h = np.full(arr.shape[0], FNV_OFFSET, dtype=np.uint64)
    prime = np.uint64(FNV_PRIME)
    with np.errstate(over="ignore"):
        for col in range(arr.shape[1]):
            h ^= arr[:, col].astype(np.uint64)
            h *= prime
    return h
