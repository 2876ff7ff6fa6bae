"""A small leveled LSM-tree: memtable + WAL, L0 (overlapping) and sorted levels L1..Lk."""

from __future__ import annotations

import bisect
import heapq
import os
import struct
import zlib
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional

from ..devio import DeviceIO
from ..errors import IncompatibleStore
from .entry import IndexEntry, Kind, apply, decode_entry, encode_entry, encoded_size, fold
from .sstable import Table, build_table_raw

MANIFEST = "MANIFEST"
MANIFEST_HEADER = "HASHKV-LSM 1"
_WAL_HEAD = struct.Struct("<II")  # crc32, payload length


@dataclass
class LsmConfig:
    memtable_bytes: int = 2 << 20
    fanout: int = 10
    l0_compaction_trigger: int = 4
    block_size: int = 4096
    bloom_bits_per_key: int = 10
    bloom_k: int = 7
    max_levels: int = 7

    def level_capacity(self, level: int) -> int:
        return self.memtable_bytes * self.fanout ** level


class LSMTree:
    def __init__(self, directory: str, config: Optional[LsmConfig] = None, io: Optional[DeviceIO] = None,
                 durable: bool = False):
        self.dir = directory
        self.cfg = config or LsmConfig()
        self.io = io or DeviceIO(fsync=False)
        self.durable = durable
        os.makedirs(directory, exist_ok=True)
        self.mem: dict[bytes, IndexEntry] = {}
        self.mem_bytes = 0
        self._mem_sorted: Optional[list] = None
        self.levels: list[list[Table]] = [[] for _ in range(self.cfg.max_levels)]
        self._mins: list[list[bytes]] = [[] for _ in range(self.cfg.max_levels)]
        self.compact_pointer: dict[int, bytes] = {}
        self.next_file = 1
        self.last_seq = 0
        self.wal_id = 0
        self.wal_fd = -1
        self.wal_off = 0
        self.stats = Counter()
        self._load()

    # ------------------------------------------------------------------ files
    def _path(self, name: str) -> str:
        return os.path.join(self.dir, name)

    def _table_name(self, fid: int) -> str:
        return f"{fid:06d}.sst"

    def _wal_name(self, wid: int) -> str:
        return f"wal-{wid:06d}.log"

    def _load(self) -> None:
        mpath = self._path(MANIFEST)
        if not os.path.exists(mpath):
            self._new_wal()
            self._write_manifest()
            return
        with open(mpath) as f:
            lines = f.read().splitlines()
        if not lines or lines[0] != MANIFEST_HEADER:
            raise IncompatibleStore(f"unrecognised LSM manifest in {self.dir}")
        for line in lines[1:]:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "next_file":
                self.next_file = int(parts[1])
            elif parts[0] == "last_seq":
                self.last_seq = int(parts[1])
            elif parts[0] == "wal":
                self.wal_id = int(parts[1])
            elif parts[0] == "pointer":
                self.compact_pointer[int(parts[1])] = bytes.fromhex(parts[2]) if len(parts) > 2 else b""
            elif parts[0] == "table":
                level, fid = int(parts[1]), int(parts[2])
                self.levels[level].append(Table(self._path(self._table_name(fid)), fid, level, self.io))
        self.levels[0].sort(key=lambda t: t.file_id)
        for lvl in range(1, self.cfg.max_levels):
            self._sort_level(lvl)
        live = {self._table_name(t.file_id) for lvl in self.levels for t in lvl}
        live.add(self._wal_name(self.wal_id))
        for name in os.listdir(self.dir):
            if (name.endswith(".sst") or name.startswith("wal-") or name.endswith(".tmp")) and name not in live:
                os.unlink(self._path(name))
        self._replay_wal()

    def _replay_wal(self) -> None:
        path = self._path(self._wal_name(self.wal_id))
        data = b""
        if os.path.exists(path):
            with open(path, "rb") as f:
                data = f.read()
        pos = 0
        while len(data) - pos >= _WAL_HEAD.size:
            crc, n = _WAL_HEAD.unpack_from(data, pos)
            payload = data[pos + _WAL_HEAD.size:pos + _WAL_HEAD.size + n]
            if n == 0 or len(payload) < n or zlib.crc32(payload) != crc:
                break
            p = 0
            while p < n:
                key, e, p = decode_entry(payload, p)
                self._mem_apply(key, e)
                if e.seq > self.last_seq:
                    self.last_seq = e.seq
            pos += _WAL_HEAD.size + n
            self.stats["wal_replayed_batches"] += 1
        self.wal_fd = os.open(path, os.O_RDWR | os.O_CREAT, 0o644)
        self.wal_off = pos
        # drop any torn tail so later appends stay parseable
        os.ftruncate(self.wal_fd, pos)

    def _new_wal(self) -> None:
        self.wal_id = self.next_file
        self.next_file += 1
        self.wal_fd = os.open(self._path(self._wal_name(self.wal_id)), os.O_RDWR | os.O_CREAT | os.O_TRUNC, 0o644)
        self.wal_off = 0

    def _write_manifest(self) -> None:
        lines = [MANIFEST_HEADER, f"next_file {self.next_file}", f"last_seq {self.last_seq}", f"wal {self.wal_id}"]
        for lvl, ptr in sorted(self.compact_pointer.items()):
            lines.append(f"pointer {lvl} {ptr.hex()}")
        for lvl, tables in enumerate(self.levels):
            for t in tables:
                lines.append(f"table {lvl} {t.file_id} {t.size} {t.entries} {t.min_key.hex()} {t.max_key.hex()}")
        data = ("\n".join(lines) + "\n").encode()
        self.io.write_file_atomic(self._path(MANIFEST), data, "lsm", "lsm.manifest", sync=self.durable)
        self.stats["manifest_writes"] += 1

    def _sort_level(self, lvl: int) -> None:
        self.levels[lvl].sort(key=lambda t: t.min_key)
        self._mins[lvl] = [t.min_key for t in self.levels[lvl]]

    # --------------------------------------------------------------- writes
    def _mem_apply(self, key: bytes, e: IndexEntry) -> None:
        old = self.mem.get(key)
        if old is not None:
            self.mem_bytes -= encoded_size(key, old)
            e = apply(old, e)
        else:
            self._mem_sorted = None
        self.mem[key] = e
        self.mem_bytes += encoded_size(key, e)

    def put(self, key: bytes, entry: IndexEntry) -> int:
        return self.write_batch([(key, entry)])

    def write_batch(self, items: Iterable[tuple[bytes, IndexEntry]]) -> int:
        """Assign sequence numbers, log to the WAL, apply to the memtable. Returns the last sequence."""
        chunks = []
        seq = self.last_seq
        for key, e in items:
            seq += 1
            e = e._replace(seq=seq)
            chunks.append(encode_entry(key, e))
            self._mem_apply(key, e)
        if not chunks:
            return self.last_seq
        self.last_seq = seq
        payload = b"".join(chunks)
        rec = _WAL_HEAD.pack(zlib.crc32(payload), len(payload)) + payload
        self.io.pwrite(self.wal_fd, rec, self.wal_off, "wal")
        self.wal_off += len(rec)
        self.stats["puts"] += len(chunks)
        if self.mem_bytes >= self.cfg.memtable_bytes:
            self.flush_memtable()
            self.maybe_compact()
        return seq

    def sync(self) -> None:
        self.io.sync(self.wal_fd, "lsm.wal")

    # ---------------------------------------------------------------- reads
    def get(self, key: bytes) -> Optional[IndexEntry]:
        """Newest folded entry for ``key`` (tombstones included), or None."""
        self.stats["lookups"] += 1
        pending = []
        e = self.mem.get(key)
        if e is not None:
            if e.kind != Kind.RELOCATE:
                return e
            pending.append(e)
        base = None
        for t in reversed(self.levels[0]):
            self.stats["table_probes"] += 1
            e = t.get(key)
            if e is not None:
                if e.kind != Kind.RELOCATE:
                    base = e
                    break
                pending.append(e)
        if base is None:
            for lvl in range(1, self.cfg.max_levels):
                tables = self.levels[lvl]
                if not tables:
                    continue
                i = bisect.bisect_right(self._mins[lvl], key) - 1
                if i < 0 or key > tables[i].max_key:
                    continue
                self.stats["table_probes"] += 1
                e = tables[i].get(key)
                if e is not None:
                    if e.kind != Kind.RELOCATE:
                        base = e
                        break
                    pending.append(e)
        cur = base
        for r in reversed(pending):
            cur = apply(cur, r)
        if cur is None or cur.kind == Kind.RELOCATE:
            return None
        return cur

    def _sources(self, start: Optional[bytes]) -> list:
        if self._mem_sorted is None:
            self._mem_sorted = sorted(self.mem)
        keys = self._mem_sorted
        i = 0 if start is None else bisect.bisect_left(keys, start)
        mem = self.mem
        # snapshot entries now; the memtable may change while the iterator is live
        srcs = [iter([(k, mem[k]) for k in keys[i:]])]
        for t in reversed(self.levels[0]):
            srcs.append(t.iter_from(start))
        for lvl in range(1, self.cfg.max_levels):
            tables = self.levels[lvl]
            if tables:
                j = 0 if start is None else max(0, bisect.bisect_right(self._mins[lvl], start) - 1)
                srcs.append(self._chain(tables[j:], start))
        return srcs

    @staticmethod
    def _chain(tables, start):
        for t in tables:
            yield from t.iter_from(start)

    @staticmethod
    def _merge(sources) -> Iterator[tuple[bytes, list]]:
        """Merge prioritised sorted sources; yields (key, entries newest-first)."""
        streams = [_tagged(it, p) for p, it in enumerate(sources)]
        cur = None
        group: list = []
        for k, _p, e in heapq.merge(*streams):
            if k != cur:
                if group:
                    yield cur, group
                cur = k
                group = [e]
            else:
                group.append(e)
        if group:
            yield cur, group

    def iter_range(self, start: Optional[bytes] = None, end: Optional[bytes] = None) -> Iterator[tuple[bytes, IndexEntry]]:
        """Visible (key, entry) pairs in key order; tombstones and unresolved relocations skipped."""
        for key, group in self._merge(self._sources(start)):
            if end is not None and key >= end:
                return
            e = fold(group)
            if e is None or e.kind == Kind.TOMBSTONE or e.kind == Kind.RELOCATE:
                continue
            yield key, e

    def scan(self, start: bytes, count: Optional[int] = None, end: Optional[bytes] = None) -> list:
        out = []
        if count is not None and count <= 0:
            return out
        for item in self.iter_range(start, end):
            out.append(item)
            if count is not None and len(out) >= count:
                break
        return out

    # ------------------------------------------------------------ flushing
    def _write_tables(self, items: list, level: int) -> list[Table]:
        out = []
        target = self.cfg.memtable_bytes
        batch: list = []
        size = 0
        for key, raw in items:
            batch.append((key, raw))
            size += len(raw)
            if size >= target:
                out.append(self._write_table(batch, level))
                batch, size = [], 0
        if batch:
            out.append(self._write_table(batch, level))
        return out

    def _write_table(self, items: list, level: int) -> Table:
        fid = self.next_file
        self.next_file += 1
        data = build_table_raw(items, self.cfg.block_size, self.cfg.bloom_bits_per_key, self.cfg.bloom_k)
        path = self._path(self._table_name(fid))
        fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o644)
        try:
            self.io.pwrite(fd, data, 0, "lsm")
            if self.durable:
                self.io.sync(fd, "lsm.table")
        finally:
            os.close(fd)
        self.stats["table_bytes_written"] += len(data)
        return Table(path, fid, level, self.io)

    def flush_memtable(self) -> None:
        if not self.mem:
            return
        items = [(k, encode_entry(k, e)) for k, e in sorted(self.mem.items())]
        table = self._write_table(items, 0)
        self.levels[0].append(table)
        old_wal_fd, old_wal = self.wal_fd, self._wal_name(self.wal_id)
        self._new_wal()
        self._write_manifest()
        os.close(old_wal_fd)
        os.unlink(self._path(old_wal))
        self.mem = {}
        self.mem_bytes = 0
        self._mem_sorted = None
        self.stats["memtable_flushes"] += 1
        self.stats["flush_bytes"] += table.size

    # ---------------------------------------------------------- compaction
    def level_bytes(self, lvl: int) -> int:
        return sum(t.size for t in self.levels[lvl])

    def _exists_below(self, key: bytes, level: int) -> bool:
        for lvl in range(level + 1, self.cfg.max_levels):
            tables = self.levels[lvl]
            if not tables:
                continue
            i = bisect.bisect_right(self._mins[lvl], key) - 1
            if i >= 0 and key <= tables[i].max_key:
                return True
        return False

    def _overlapping(self, lvl: int, lo: bytes, hi: bytes) -> list[Table]:
        return [t for t in self.levels[lvl] if t.overlaps(lo, hi)]

    def maybe_compact(self) -> None:
        while True:
            if len(self.levels[0]) >= self.cfg.l0_compaction_trigger:
                self.compact(0)
                continue
            for lvl in range(1, self.cfg.max_levels - 1):
                if self.level_bytes(lvl) > self.cfg.level_capacity(lvl):
                    self.compact(lvl)
                    break
            else:
                return

    def compact(self, level: int) -> dict:
        """Merge ``level`` into ``level + 1``; returns bytes read / written."""
        if level == 0:
            upper = list(self.levels[0])
            if not upper:
                return {"bytes_read": 0, "bytes_written": 0}
            lo = min(t.min_key for t in upper)
            hi = max(t.max_key for t in upper)
            sources = [t.raw_items() for t in reversed(upper)]
        else:
            tables = self.levels[level]
            if not tables:
                return {"bytes_read": 0, "bytes_written": 0}
            ptr = self.compact_pointer.get(level, b"")
            pick = next((t for t in tables if t.min_key > ptr), tables[0])
            upper = [pick]
            lo, hi = pick.min_key, pick.max_key
            self.compact_pointer[level] = pick.max_key
            sources = [pick.raw_items()]
        lower = self._overlapping(level + 1, lo, hi)
        if lower:
            sources.append([x for t in lower for x in t.raw_items()])
        out_level = level + 1
        merged = self._merge_raw(sources, lambda key: self._exists_below(key, out_level))
        bytes_read = sum(t.size for t in upper) + sum(t.size for t in lower)
        outputs = self._write_tables(merged, out_level)
        self._install(level, upper, lower, out_level, outputs)
        written = sum(t.size for t in outputs)
        self.stats["compactions"] += 1
        self.stats["compaction_bytes_read"] += bytes_read
        self.stats["compaction_bytes_written"] += written
        return {"bytes_read": bytes_read, "bytes_written": written}

    @staticmethod
    def _merge_raw(sources: list, keep_marker) -> list:
        """Merge prioritised sorted ``(key, raw)`` lists (index 0 newest) into one folded list.

        Entries whose key appears once are copied as bytes; tombstones and
        relocations survive only where ``keep_marker(key)`` says older data may lie below.
        """
        tagged = []
        for p, src in enumerate(sources):
            tagged.extend([(k, p, raw) for k, raw in src])
        tagged.sort()  # runs are already sorted, so this is a linear merge
        out = []
        append = out.append
        n = len(tagged)
        i = 0
        while i < n:
            key, _p, raw = tagged[i]
            j = i + 1
            if j < n and tagged[j][0] == key:
                while j < n and tagged[j][0] == key:
                    j += 1
                e = fold([decode_entry(t[2], 0)[1] for t in tagged[i:j]])
                i = j
                if e is None:
                    continue
                kind = e.kind
                raw = None
            else:
                i = j
                kind = raw[1]
            if (kind == Kind.TOMBSTONE or kind == Kind.RELOCATE) and not keep_marker(key):
                continue
            append((key, raw if raw is not None else encode_entry(key, e)))
        return out

    def _install(self, level, upper, lower, out_level, outputs) -> None:
        dead = {id(t) for t in upper} | {id(t) for t in lower}
        self.levels[level] = [t for t in self.levels[level] if id(t) not in dead]
        self.levels[out_level] = [t for t in self.levels[out_level] if id(t) not in dead] + outputs
        if level >= 1:
            self._sort_level(level)
        self._sort_level(out_level)
        self._write_manifest()
        for t in list(upper) + list(lower):
            t.close()
            os.unlink(t.path)

    def compact_all(self) -> dict:
        """Manual full compaction: everything merged into one level with disjoint tables."""
        self.flush_memtable()
        inputs = [t for lvl in self.levels for t in lvl]
        if not inputs:
            return {"bytes_read": 0, "bytes_written": 0}
        sources = [t.raw_items() for t in reversed(self.levels[0])]
        for lvl in range(1, self.cfg.max_levels):
            if self.levels[lvl]:
                sources.append([x for t in self.levels[lvl] for x in t.raw_items()])
        merged = self._merge_raw(sources, lambda key: False)
        total = sum(t.size for t in inputs)
        out_level = 1
        while out_level < self.cfg.max_levels - 1 and self.cfg.level_capacity(out_level) < total:
            out_level += 1
        outputs = self._write_tables(merged, out_level)
        for lvl in range(self.cfg.max_levels):
            self.levels[lvl] = []
        self.levels[out_level] = outputs
        for lvl in range(1, self.cfg.max_levels):
            self._sort_level(lvl)
        self._write_manifest()
        for t in inputs:
            t.close()
            os.unlink(t.path)
        written = sum(t.size for t in outputs)
        self.stats["compactions"] += 1
        self.stats["compaction_bytes_read"] += total
        self.stats["compaction_bytes_written"] += written
        return {"bytes_read": total, "bytes_written": written}

    # ------------------------------------------------------------- helpers
    def table_metas(self) -> list[tuple[int, int, bytes, bytes, int]]:
        return [(lvl, t.file_id, t.min_key, t.max_key, t.entries) for lvl, ts in enumerate(self.levels) for t in ts]

    def all_tables(self) -> list[Table]:
        return [t for lvl in self.levels for t in lvl]

    def close(self) -> None:
        if self.wal_fd >= 0:
            if self.durable:
                self.sync()
            os.close(self.wal_fd)
            self.wal_fd = -1
        self._write_manifest()
        for t in self.all_tables():
            t.close()

    def abandon(self) -> None:
        """Drop all handles without writing anything (crash simulation)."""
        if self.wal_fd >= 0:
            os.close(self.wal_fd)
            self.wal_fd = -1
        for t in self.all_tables():
            t.close()


def _tagged(it, prio: int):
    for k, e in it:
        yield k, prio, e
