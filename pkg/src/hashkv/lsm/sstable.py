"""Immutable sorted tables.

File layout::

    [data block]*  [bloom filter bytes]  [index block]  [footer: 48 bytes]

    data block  = [n:u32][n x entry offset:u32, relative to block start][entries]
    index block = [n_blocks:u32] n_blocks x ([klen:u8][first key][offset:u64][length:u32])
                  [klen:u8][min key][klen:u8][max key]
    footer      = magic "HKVSST01", version:u32, bloom_k:u32, entries:u64,
                  bloom_off:u64, bloom_len:u32, index_off:u64, index_len:u32

The per-block offset array lets a point lookup binary-search a block without
decoding every entry.
"""

from __future__ import annotations

import bisect
import os
import struct
from typing import Iterator, Optional

from ..errors import CorruptRecord
from .bloom import BloomFilter
from .entry import IndexEntry, decode_entry, decode_key_at, encode_entry

MAGIC = b"HKVSST01"
VERSION = 1
FOOTER = struct.Struct("<8sIIQQIQI")
_U32 = struct.Struct("<I")
_BLOCK_REF = struct.Struct("<QI")
_KEY_AT = 10  # key_len, kind, seq precede the key


def build_table(items: list, block_size: int = 4096, bits_per_key: int = 10, bloom_k: int = 7) -> bytes:
    """Serialise sorted ``(key, IndexEntry)`` pairs into table bytes."""
    return build_table_raw([(k, encode_entry(k, e)) for k, e in items], block_size, bits_per_key, bloom_k)


def build_table_raw(items: list, block_size: int = 4096, bits_per_key: int = 10, bloom_k: int = 7) -> bytes:
    """Same as build_table, for sorted ``(key, encoded entry)`` pairs."""
    out = bytearray()
    index = []
    i, n_items = 0, len(items)
    while i < n_items:
        first_key = items[i][0]
        encs = []
        size = 0
        while i < n_items and size < block_size:
            enc = items[i][1]
            encs.append(enc)
            size += len(enc) + 4
            i += 1
        n = len(encs)
        offsets = []
        pos = 4 + 4 * n
        for e in encs:
            offsets.append(pos)
            pos += len(e)
        block = _U32.pack(n) + struct.pack(f"<{n}I", *offsets) + b"".join(encs)
        index.append((first_key, len(out), len(block)))
        out.extend(block)

    bloom = BloomFilter.build([k for k, _ in items], bits_per_key, bloom_k)
    bloom_off = len(out)
    bloom_bytes = bloom.to_bytes()
    out.extend(bloom_bytes)

    idx = bytearray(_U32.pack(len(index)))
    for fk, off, ln in index:
        idx.append(len(fk))
        idx.extend(fk)
        idx.extend(_BLOCK_REF.pack(off, ln))
    min_key = items[0][0] if items else b""
    max_key = items[-1][0] if items else b""
    for k in (min_key, max_key):
        idx.append(len(k))
        idx.extend(k)
    index_off = len(out)
    out.extend(idx)
    out.extend(FOOTER.pack(MAGIC, VERSION, bloom_k, len(items), bloom_off, len(bloom_bytes), index_off, len(idx)))
    return bytes(out)


class Table:
    """Open handle on one SSTable; index and Bloom filter are held in memory."""

    def __init__(self, path: str, file_id: int, level: int, io=None):
        self.path = path
        self.file_id = file_id
        self.level = level
        self.io = io
        self.fd = os.open(path, os.O_RDONLY)
        self.size = os.fstat(self.fd).st_size
        if self.size < FOOTER.size:
            raise CorruptRecord(f"table {path} too small")
        foot = os.pread(self.fd, FOOTER.size, self.size - FOOTER.size)
        magic, version, bloom_k, entries, bloom_off, bloom_len, index_off, index_len = FOOTER.unpack(foot)
        if magic != MAGIC:
            raise CorruptRecord(f"bad table magic in {path}")
        self.entries = entries
        self.data_end = bloom_off
        self.bloom = BloomFilter.from_bytes(os.pread(self.fd, bloom_len, bloom_off), bloom_k)
        idx = os.pread(self.fd, index_len, index_off)
        (n,) = _U32.unpack_from(idx, 0)
        pos = 4
        self.first_keys: list[bytes] = []
        self.blocks: list[tuple[int, int]] = []
        for _ in range(n):
            kl = idx[pos]
            self.first_keys.append(bytes(idx[pos + 1:pos + 1 + kl]))
            pos += 1 + kl
            self.blocks.append(_BLOCK_REF.unpack_from(idx, pos))
            pos += _BLOCK_REF.size
        kl = idx[pos]
        self.min_key = bytes(idx[pos + 1:pos + 1 + kl])
        pos += 1 + kl
        kl = idx[pos]
        self.max_key = bytes(idx[pos + 1:pos + 1 + kl])

    def _read(self, n: int, off: int) -> bytes:
        if self.io is not None:
            return self.io.pread(self.fd, n, off)
        return os.pread(self.fd, n, off)

    def overlaps(self, lo: bytes, hi: bytes) -> bool:
        return not (self.max_key < lo or self.min_key > hi)

    def get(self, key: bytes, check_bloom: bool = True) -> Optional[IndexEntry]:
        if key < self.min_key or key > self.max_key:
            return None
        if check_bloom and not self.bloom.may_contain(key):
            return None
        i = bisect.bisect_right(self.first_keys, key) - 1
        if i < 0:
            return None
        off, ln = self.blocks[i]
        block = self._read(ln, off)
        (n,) = _U32.unpack_from(block, 0)
        offsets = struct.unpack_from(f"<{n}I", block, 4)
        lo, hi = 0, n
        while lo < hi:
            mid = (lo + hi) // 2
            if decode_key_at(block, offsets[mid]) < key:
                lo = mid + 1
            else:
                hi = mid
        if lo < n:
            k, e, _ = decode_entry(block, offsets[lo])
            if k == key:
                return e
        return None

    @staticmethod
    def _raw_block(block) -> list:
        (n,) = _U32.unpack_from(block, 0)
        offsets = struct.unpack_from(f"<{n}I", block, 4) + (len(block),)
        out = []
        for i in range(n):
            a = offsets[i]
            raw = bytes(block[a:offsets[i + 1]])
            out.append((raw[_KEY_AT:_KEY_AT + raw[0]], raw))
        return out

    def raw_items(self) -> list:
        """All ``(key, encoded entry)`` pairs without decoding the entries."""
        if not self.blocks:
            return []
        data = memoryview(self._read(self.data_end, 0))
        out = []
        for off, ln in self.blocks:
            out.extend(self._raw_block(data[off:off + ln]))
        return out

    @staticmethod
    def _decode_block(block) -> list:
        (n,) = _U32.unpack_from(block, 0)
        pos = 4 + 4 * n
        out = []
        for _ in range(n):
            k, e, pos = decode_entry(block, pos)
            out.append((k, e))
        return out

    def iter_from(self, start: Optional[bytes] = None) -> Iterator[tuple[bytes, IndexEntry]]:
        first = 0
        if start is not None:
            if start > self.max_key:
                return
            first = max(0, bisect.bisect_right(self.first_keys, start) - 1)
        for off, ln in self.blocks[first:]:
            for k, e in self._decode_block(self._read(ln, off)):
                if start is None or k >= start:
                    yield k, e

    def all_items(self) -> list:
        if not self.blocks:
            return []
        data = self._read(self.data_end, 0)
        out = []
        for off, ln in self.blocks:
            out.extend(self._decode_block(memoryview(data)[off:off + ln]))
        return out

    def close(self) -> None:
        if self.fd >= 0:
            os.close(self.fd)
            self.fd = -1
