"""Bloom filter with double hashing (CRC32 base hash, rotated delta)."""

from __future__ import annotations

import math
import zlib

import numpy as np


class BloomFilter:
    def __init__(self, bits: bytearray, k: int):
        self.bits = bits
        self.nbits = len(bits) * 8
        self.k = k

    @classmethod
    def build(cls, keys, bits_per_key: int = 10, k: int = 7) -> "BloomFilter":
        n = max(1, len(keys))
        nbits = max(64, n * bits_per_key)
        nbytes = (nbits + 7) // 8
        if not keys:
            return cls(bytearray(nbytes), k)
        h = np.fromiter(map(zlib.crc32, keys), dtype=np.uint64, count=len(keys))
        delta = ((h >> 17) | (h << 15)) & 0xFFFFFFFF
        # same probe sequence as _positions, all keys at once
        pos = (h[:, None] + delta[:, None] * np.arange(k, dtype=np.uint64)) & 0xFFFFFFFF
        flags = np.zeros(nbytes * 8, dtype=bool)
        flags[(pos % np.uint64(nbytes * 8)).ravel()] = True
        return cls(bytearray(np.packbits(flags, bitorder="little").tobytes()), k)

    @staticmethod
    def optimal_k(bits_per_key: int) -> int:
        return max(1, min(30, int(round(bits_per_key * math.log(2)))))

    def _positions(self, key: bytes):
        h = zlib.crc32(key)
        delta = ((h >> 17) | (h << 15)) & 0xFFFFFFFF
        nbits = self.nbits
        for _ in range(self.k):
            yield h % nbits
            h = (h + delta) & 0xFFFFFFFF

    def add(self, key: bytes) -> None:
        bits = self.bits
        for p in self._positions(key):
            bits[p >> 3] |= 1 << (p & 7)

    def may_contain(self, key: bytes) -> bool:
        bits = self.bits
        for p in self._positions(key):
            if not bits[p >> 3] & (1 << (p & 7)):
                return False
        return True

    def to_bytes(self) -> bytes:
        return bytes(self.bits)

    @classmethod
    def from_bytes(cls, data: bytes, k: int) -> "BloomFilter":
        return cls(bytearray(data), k)
