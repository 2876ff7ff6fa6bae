"""The public key-value store: PUT / GET / DELETE / SCAN over a chosen value backend.

Backends:

* ``hashkv``  hash-grouped segment store (optionally with a cold data log)
* ``vlog``    one circular value log, reclaimed from the tail
* ``inline``  whole pairs in the LSM index, no separation

Writes land in the write cache.  A flush appends values, journals the index
updates, applies them to the LSM index and marks the journal record free.  GC
runs inside a flush when the backend runs short of space.
"""

from __future__ import annotations

import os
import time
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Optional

from . import journal as jn
from .config import StoreConfig
from .devio import DeviceIO, fadvise_dontneed, fadvise_willneed
from .errors import (
    CorruptRecord,
    IncompatibleStore,
    InvalidArgument,
    NeedsGC,
    NothingToCollect,
    OutOfSpace,
    StoreError,
)
from .gc import GroupSelector, plan_group_gc
from .lsm.entry import IndexEntry, Kind
from .lsm.tree import LSMTree
from .metrics import GcStats, Timers
from .record import (
    FLAG_TOMBSTONE,
    HEADER_SIZE,
    MAX_KEY_SIZE,
    TERMINATOR,
    Area,
    ValueLocation,
    encode_record,
    hash_group,
    iter_records,
)
from .segments import SegmentStore
from .vlog import VLogStore, collect_chunk
from .write_cache import MISS, WriteCache

STORE_META = "STORE"
STORE_MAGIC = "HASHKV-STORE 1"
CLEAN = "CLEAN"
CHECKPOINT = "segment_table.ckpt"


@dataclass
class RecoveryReport:
    clean: bool = True
    replayed_flushes: int = 0
    replayed_gcs: int = 0
    applied_ops: int = 0
    scan_rebuilt: bool = False
    notes: list = field(default_factory=list)


class Store:
    """Open with ``Store(config)`` or :func:`open_store`; close with :meth:`close`."""

    def __init__(self, config: StoreConfig, io: Optional[DeviceIO] = None):
        cfg = config.validate()
        if not cfg.directory:
            raise InvalidArgument("config.directory is required")
        self.cfg = cfg
        self.dir = cfg.directory
        os.makedirs(self.dir, exist_ok=True)
        self.io = io or DeviceIO(fsync=cfg.fsync)
        self.backend = cfg.value_backend
        self.journaling = cfg.journaling
        self.timers = Timers()
        self.gc_stats = GcStats()        # segment-group GC
        self.vlog_gc_stats = GcStats()   # vLog tail GC
        self.cold_gc_stats = GcStats()   # cold data log GC
        self.counters: Counter = Counter()
        self.cache = WriteCache(cfg.write_cache_bytes)
        self.selector = GroupSelector(cfg.gc_policy, cfg.gra_d, cfg.seed)
        self.flush_counter = 0
        self.next_op = 1
        self.epoch = 0
        self.closed = False
        self.seg: Optional[SegmentStore] = None
        self.vlog: Optional[VLogStore] = None
        geom = cfg.geometry
        self._created = not os.path.exists(self._path(STORE_META))
        self._check_meta()
        self.lsm = LSMTree(os.path.join(self.dir, "lsm"), cfg.lsm, self.io, durable=self.journaling)
        if self.backend == "hashkv":
            self.seg = SegmentStore(os.path.join(self.dir, "values.dat"), geom, self.io, with_cold=cfg.hotness,
                                    read_parallelism=cfg.gc_read_parallelism)
        elif self.backend == "vlog":
            self.vlog = VLogStore(os.path.join(self.dir, "vlog.dat"), geom.provisioned, cfg.vlog_chunk_bytes, self.io)
        self.wj = jn.Journal(os.path.join(self.dir, "write_journal.dat"), self.io, self.journaling, "wj")
        self.gj = jn.Journal(os.path.join(self.dir, "gc_journal.dat"), self.io, self.journaling, "gj")
        self._pool = ThreadPoolExecutor(cfg.flush_parallelism) if cfg.flush_parallelism > 1 else None
        self.recovery = self._open()

    # ------------------------------------------------------------- files
    def _path(self, name: str) -> str:
        return os.path.join(self.dir, name)

    def _meta_lines(self) -> list[str]:
        g = self.cfg.geometry
        cold = g.cold_size if (self.backend == "hashkv" and self.cfg.hotness) else 0
        return [STORE_MAGIC, f"backend {self.backend}", f"n_main {g.n_main}", f"main_size {g.main_size}",
                f"log_size {g.log_size}", f"n_log {g.n_log}", f"cold_size {cold}",
                f"vlog_size {g.provisioned if self.backend == 'vlog' else 0}"]

    def _check_meta(self) -> None:
        path = self._path(STORE_META)
        want = self._meta_lines()
        if not os.path.exists(path):
            if os.path.exists(self._path("lsm")):
                raise IncompatibleStore(f"{self.dir} holds data but no {STORE_META} file")
            self.io.write_file_atomic(path, ("\n".join(want) + "\n").encode(), "checkpoint", "meta",
                                      sync=self.journaling)
            return
        with open(path) as f:
            have = f.read().splitlines()
        if not have or have[0] != STORE_MAGIC:
            raise IncompatibleStore(f"unrecognised store header in {path}")
        if have != want:
            diff = sorted(set(have) ^ set(want))
            raise IncompatibleStore(f"store in {self.dir} was created with different settings: {diff}")

    # ---------------------------------------------------------- recovery
    def _open(self) -> RecoveryReport:
        clean = os.path.exists(self._path(CLEAN))
        rep = RecoveryReport(clean=clean)
        ck = jn.read_checkpoint(self._path(CHECKPOINT))
        last_op = 0
        if ck is not None:
            self.epoch = ck.epoch
            last_op = ck.last_op_id
            self.flush_counter = ck.flush_counter
            if self.seg is not None and ck.segments is not None:
                self.seg.decode_state(ck.segments)
            if self.vlog is not None and ck.vlog is not None:
                self.vlog.log.head, self.vlog.log.tail = ck.vlog
        entries = jn.merge_entries(self.wj.read(), self.gj.read())
        committed = [e for e in entries if e.committed and e.op_id > last_op]
        for e in committed:
            self._apply_delta(e.body)
            rep.applied_ops += 1
        for e in committed:
            if not e.freed:
                self._redo(e.body)
                if e.body.kind == jn.OpKind.FLUSH:
                    rep.replayed_flushes += 1
                else:
                    rep.replayed_gcs += 1
        if entries:
            self.next_op = max(last_op, entries[-1].op_id) + 1
        else:
            self.next_op = last_op + 1
        fresh = self._created
        if not clean and not fresh:
            if not self.journaling:
                self._scan_rebuild()
                rep.scan_rebuilt = True
            self._neutralize()
            self.checkpoint()
        elif entries:
            self.checkpoint()
        if clean:
            os.unlink(self._path(CLEAN))
        if self.seg is not None:
            self.seg.check_exclusive()
            self.selector.rebuild(self.seg.groups)
        return rep

    def _apply_delta(self, op: jn.OpRecord) -> None:
        self.flush_counter = max(self.flush_counter, op.flush_counter)
        if self.seg is not None:
            for g, gs in op.groups.items():
                self.seg.groups[g] = gs.copy()
            if op.cold is not None and self.seg.cold is not None:
                self.seg.cold.head, self.seg.cold.tail = op.cold
            if op.groups:
                self.seg.rebuild_free_list()
        if self.vlog is not None and op.vlog is not None:
            self.vlog.log.head, self.vlog.log.tail = op.vlog

    def _redo(self, op: jn.OpRecord) -> None:
        if op.kind == jn.OpKind.GC:
            self._redo_gc_data(op)
            relocs = self._relocations(op.moves)
            if relocs:
                self.lsm.write_batch(relocs)
        elif op.index:
            self.lsm.write_batch(op.index)
        if self.journaling:
            self.lsm.sync()

    def _redo_gc_data(self, op: jn.OpRecord) -> None:
        import zlib

        seg = self.seg
        cold_moves = [m for m in op.moves if m.kind == jn.MoveKind.COLD]
        for m in cold_moves:
            phys = seg.cold.base + m.new % seg.cold.size
            if zlib.crc32(self.io.pread(seg.fd, m.length, phys)) != m.crc:
                self.io.pwrite(seg.fd, self.io.pread(seg.fd, m.old_length, m.old), phys, "value")
        if cold_moves:
            seg.sync("recover.cold")
        for m in op.moves:
            if m.kind == jn.MoveKind.COLD:
                continue
            if zlib.crc32(self.io.pread(seg.fd, m.length, m.new)) == m.crc:
                continue
            data = m.payload if m.payload is not None else self.io.pread(seg.fd, m.length, m.old)
            self.io.pwrite(seg.fd, data, m.new, "value")
        if op.terminator >= 0:
            self.io.pwrite(seg.fd, TERMINATOR, op.terminator, "value")
        seg.stamp_free(op.freed)
        seg.sync("recover.gc")

    def _neutralize(self) -> None:
        """Terminate every group at its recovered end so half-written appends are ignored."""
        if self.seg is not None:
            for g in range(self.seg.n_main):
                self.seg.write_terminator(g)
            self.seg.stamp_free(self.seg.free)
            self.seg.sync("recover.neutralize")

    def _scan_rebuild(self) -> None:
        """Best-effort table repair after an unclean shutdown without journaling."""
        if self.seg is not None:
            seg = self.seg
            claimed: dict[int, list[int]] = defaultdict(list)
            for s in sorted(seg.free):
                hdr = self.io.pread(seg.fd, HEADER_SIZE + MAX_KEY_SIZE, seg.log_start(s))
                if hdr[:HEADER_SIZE] == TERMINATOR or hdr[1] == 0:
                    continue
                claimed[hash_group(hdr[HEADER_SIZE:HEADER_SIZE + hdr[1]], seg.n_main)].append(s)
            for g, gs in enumerate(seg.groups):
                self._extend_tail(g)
                for s in claimed.get(g, ()):
                    gs.logs.append([s, 0])
                    self._extend_tail(g)
            seg.rebuild_free_list()
            if seg.cold is not None:
                seg.cold.head = max(seg.cold.head, self._max_index_end(Area.COLD))
        if self.vlog is not None:
            self.vlog.log.head = max(self.vlog.log.head, self._max_index_end(Area.VLOG))

    def _extend_tail(self, g: int) -> None:
        seg = self.seg
        gs = seg.groups[g]
        if gs.logs:
            start, used, cap = seg.log_start(gs.logs[-1][0]), gs.logs[-1][1], seg.log_size
        else:
            start, used, cap = seg.main_start(g), gs.main_used, seg.main_size
        buf = self.io.pread(seg.fd, cap - used, start + used)
        end = 0
        try:
            for off, _f, key, length in iter_records(buf):
                if hash_group(key, seg.n_main) != g:
                    break
                end = off + length
                gs.records += 1
        except CorruptRecord:
            pass
        gs.write_bytes += end
        if gs.logs:
            gs.logs[-1][1] += end
        else:
            gs.main_used += end

    def _max_index_end(self, area: Area) -> int:
        end = 0
        for _k, e in self.lsm.iter_range():
            if e.kind == Kind.LOCATION and e.location.area == area:
                end = max(end, e.location.offset + e.location.length)
        return end

    def checkpoint(self) -> None:
        """Persist the segment table (and log heads/tails), then recycle the journals."""
        c = jn.Checkpoint(self.epoch + 1, self.next_op - 1, self.flush_counter,
                          self.seg.encode_state() if self.seg is not None else None,
                          (self.vlog.head, self.vlog.tail) if self.vlog is not None else None)
        if self.journaling:
            self.lsm.sync()
        jn.write_checkpoint(self._path(CHECKPOINT), c, self.io, durable=self.journaling)
        self.epoch += 1
        self.wj.truncate()
        self.gj.truncate()
        self.counters["checkpoints"] += 1

    def _maybe_checkpoint(self) -> None:
        if self.journaling and self.wj.end + self.gj.end >= self.cfg.checkpoint_journal_bytes:
            self.checkpoint()

    def _take_op(self) -> int:
        op = self.next_op
        self.next_op += 1
        return op

    # ------------------------------------------------------------ writes
    def _check_key(self, key: bytes) -> None:
        if not isinstance(key, (bytes, bytearray)) or not 1 <= len(key) <= MAX_KEY_SIZE:
            raise InvalidArgument(f"key must be 1..{MAX_KEY_SIZE} bytes")

    def is_inline(self, key: bytes, value: bytes) -> bool:
        if self.backend == "inline":
            return True
        return HEADER_SIZE + len(key) + len(value) < self.cfg.selective_threshold

    def put(self, key: bytes, value: bytes) -> None:
        t0 = time.perf_counter()
        self._check_key(key)
        if not isinstance(value, (bytes, bytearray)):
            raise InvalidArgument("value must be bytes")
        key, value = bytes(key), bytes(value)
        size = HEADER_SIZE + len(key) + len(value)
        if not self.is_inline(key, value):
            limit = self.cfg.geometry.max_record if self.backend == "hashkv" else self.cfg.vlog_chunk_bytes
            if size > limit:
                raise InvalidArgument(f"pair of {size} bytes exceeds the largest storable record ({limit})")
        full = self.cache.put(key, value)
        self.counters["puts"] += 1
        self.counters["user_bytes"] += len(key) + len(value)
        self.timers.add("Cache", time.perf_counter() - t0)
        if full:
            self.flush()

    def delete(self, key: bytes) -> None:
        t0 = time.perf_counter()
        self._check_key(key)
        full = self.cache.put(bytes(key), None)
        self.counters["deletes"] += 1
        self.timers.add("Cache", time.perf_counter() - t0)
        if full:
            self.flush()

    def flush(self) -> dict:
        """Write every cached pair to the backend and the index; returns flush stats."""
        if not self.cache.entries:
            return {"batches": 0, "bytes": 0, "groups": 0}
        stats = self._flush_items(list(self.cache.entries.items()))
        self.cache.clear()
        return stats

    def _flush_items(self, items: list) -> dict:
        index_items = []
        sep = []  # (key, encoded record, is tombstone)
        for k, v in items:
            if v is None:
                index_items.append((k, IndexEntry.tombstone()))
                if self.backend == "hashkv":
                    sep.append((k, encode_record(FLAG_TOMBSTONE, k), True))
            elif self.is_inline(k, v):
                index_items.append((k, IndexEntry.inline(v)))
            else:
                sep.append((k, encode_record(0, k, v), False))
        stats = {"batches": 0, "bytes": sum(len(b) for _, b, _ in sep), "groups": 0}
        touched: dict = {}
        locs: list = []
        runs: list = []
        if self.backend == "hashkv" and sep:
            locs, runs, touched, stats["batches"] = self._place_hashkv(sep)
            stats["groups"] = len(touched)
        elif self.backend == "vlog" and sep:
            locs, runs = self._place_vlog([b for _, b, _ in sep])
            stats["batches"] = 1
        t0 = time.perf_counter()
        self._write_runs(runs)
        for (k, _b, tomb), loc in zip(sep, locs):
            if not tomb:
                index_items.append((k, IndexEntry.at(loc)))
        op_id = self._take_op()
        self.flush_counter += 1
        if self.journaling:
            if self.seg is not None and runs:
                self.seg.sync("flush.values")
            elif self.vlog is not None and runs:
                self.vlog.sync("flush.values")
            op = jn.OpRecord(jn.OpKind.FLUSH, op_id, self.flush_counter, index_items,
                             {g: self.seg.groups[g].copy() for g in touched} if self.seg is not None else {},
                             vlog=(self.vlog.head, self.vlog.tail) if self.vlog is not None else None)
            self.wj.write_body(op)
            self.wj.commit(op_id)
        t1 = time.perf_counter()
        self.timers.add("Flush", t1 - t0)
        self.lsm.write_batch(index_items)
        if self.journaling:
            self.lsm.sync()
        t2 = time.perf_counter()
        self.timers.add("Meta-Flush", t2 - t1)
        if self.journaling:
            self.wj.free(op_id)
        if self.seg is not None:
            for g in touched:
                self.selector.touch(g, self.seg.groups[g].write_bytes)
        self.counters["flushes"] += 1
        self.counters["flushed_bytes"] += stats["bytes"]
        self._maybe_checkpoint()
        return stats

    def _write_runs(self, runs: list) -> None:
        if not runs:
            return
        fd = self.seg.fd if self.seg is not None else self.vlog.fd
        if self._pool is not None and len(runs) > 1:
            list(self._pool.map(lambda r: self.io.pwrite(fd, r[1], r[0], "value"), runs))
        else:
            for off, data in runs:
                self.io.pwrite(fd, data, off, "value")

    def _place_hashkv(self, sep: list):
        seg = self.seg
        by_group: dict[int, list[int]] = defaultdict(list)
        for i, (k, _b, _t) in enumerate(sep):
            by_group[seg.group_of(k)].append(i)

        def demand() -> int:
            return sum(seg.demand(g, [len(sep[i][1]) for i in idxs]) for g, idxs in by_group.items())

        self._ensure_segments(demand)
        t0 = time.perf_counter()
        locs: list = [None] * len(sep)
        runs: list = []
        batches = 0
        thr = self.cfg.batch_write_threshold
        for g, idxs in by_group.items():
            blobs = [sep[i][1] for i in idxs]
            glocs, gruns = seg.place(g, blobs, thr)
            for i, loc in zip(idxs, glocs):
                locs[i] = loc
            runs.extend(gruns)
            batches += len(gruns)
        self.timers.add("Flush", time.perf_counter() - t0)
        return locs, runs, by_group, batches

    def _place_vlog(self, blobs: list):
        v = self.vlog
        need = v.space_for(len(b) for b in blobs)
        if not self._reclaim(v.log, need + 2 * v.chunk_bytes, self._vlog_gc_once) and v.free < need:
            raise OutOfSpace(f"vlog full: need {need} bytes, {v.free} free after GC")
        t0 = time.perf_counter()
        out = v.place(blobs)
        self.timers.add("Flush", time.perf_counter() - t0)
        return out

    def _ensure_segments(self, demand) -> None:
        seg = self.seg
        excluded: set = set()
        while len(seg.free) < demand():
            try:
                g = self.selector.select(seg.groups, self.flush_counter, seg.main_size, excluded)
            except NothingToCollect:
                raise OutOfSpace(f"need {demand()} log segments, {len(seg.free)} free, nothing left to collect")
            before = len(seg.free) - demand()
            self.gc_group(g)
            if len(seg.free) - demand() <= before:
                excluded.add(g)

    # ---------------------------------------------------------------- GC
    def gc_group(self, g: int) -> GcStats:
        """Collect one segment group (journaled when journaling is on)."""
        if self.seg is None:
            raise InvalidArgument("segment-group GC needs the hashkv backend")
        seg = self.seg
        t0 = time.perf_counter()
        hot = self.cfg.hotness and seg.cold is not None
        allow_cold = hot
        if hot:
            allow_cold = self._reclaim(seg.cold, seg.extent(g) + HEADER_SIZE, self._cold_gc_once)
            t0 = time.perf_counter()
        lookups0 = self.lsm.stats["lookups"]
        plan = plan_group_gc(seg, g, self.cache.entries, hotness=hot, drop_shadowed=not self.journaling,
                             allow_cold=allow_cold)
        plan.new_state.last_gc_flush = self.flush_counter
        if plan.cold:
            try:
                clocs, cruns = seg.cold.place(plan.cold_blobs)
            except NeedsGC:
                plan = plan_group_gc(seg, g, self.cache.entries, hotness=hot,
                                     drop_shadowed=not self.journaling, allow_cold=False)
                plan.new_state.last_gc_flush = self.flush_counter
                clocs, cruns = [], []
            for m, loc in zip(plan.cold, clocs):
                m.new = loc.offset
            seg.cold.write_runs(cruns)
        op_id = self._take_op()
        if self.journaling:
            if plan.cold:
                seg.sync("gc.cold")
            op = jn.OpRecord(jn.OpKind.GC, op_id, self.flush_counter, [], {g: plan.new_state.copy()},
                             cold=(seg.cold.head, seg.cold.tail) if seg.cold is not None else None,
                             gc_group=g, moves=plan.cold + plan.moves, freed=plan.freed,
                             terminator=plan.terminator)
            self.gj.write_body(op)
            self.gj.commit(op_id)
        for off, data in plan.runs:
            self.io.pwrite(seg.fd, data, off, "value")
            self.io.crash_point("gc.rewrite")
        if plan.terminator >= 0:
            self.io.pwrite(seg.fd, TERMINATOR, plan.terminator, "value")
        if self.journaling:
            seg.sync("gc.rewrite")
        t1 = time.perf_counter()
        self.timers.add("GC-RW", t1 - t0)
        relocs = self._relocations(plan.cold + plan.moves)
        if relocs:
            self.lsm.write_batch(relocs)
            if self.journaling:
                self.lsm.sync()
        t2 = time.perf_counter()
        self.timers.add("Meta-GC", t2 - t1)
        seg.install_group(g, plan.new_state, plan.freed)
        if self.journaling:
            self.gj.free(op_id)
        self.selector.touch(g, plan.new_state.write_bytes)
        plan.stats.lsm_lookups = self.lsm.stats["lookups"] - lookups0
        self.gc_stats.add(plan.stats)
        self.timers.add("GC-RW", time.perf_counter() - t2)
        self._maybe_checkpoint()
        return plan.stats

    def _relocations(self, moves) -> list:
        out = []
        for m in moves:
            if m.kind == jn.MoveKind.MOVE:
                src = ValueLocation(Area.SEGMENT, m.old, m.old_length)
                dst = ValueLocation(Area.SEGMENT, m.new, m.length)
            elif m.kind == jn.MoveKind.COLD:
                src = ValueLocation(Area.SEGMENT, m.old, m.old_length)
                dst = ValueLocation(Area.COLD, m.new, m.length)
            else:
                continue
            out.append((m.key, IndexEntry.relocate(src, dst)))
        return out

    def _timed_lookup(self, key: bytes):
        t0 = time.perf_counter()
        e = self.lsm.get(key)
        self.timers.add("GC-Lookup", time.perf_counter() - t0)
        return e

    def _log_gc_once(self, log, chunk: int, stats: GcStats, kind: int, label: str) -> bool:
        """One tail-chunk GC pass over a circular log (vLog or cold log). False if nothing moved."""
        if log.used == 0:
            return False
        t0 = time.perf_counter()
        lookup_time0 = self.timers.totals["GC-Lookup"]
        valid, new_tail = collect_chunk(log, chunk, self._timed_lookup, stats)
        if new_tail == log.tail:
            return False
        blobs = [data for _k, _loc, data in valid]
        try:
            locs, runs = log.place(blobs)
        except NeedsGC:
            return False
        log.write_runs(runs)
        index = [(k, IndexEntry.at(loc)) for (k, _old, _d), loc in zip(valid, locs)]
        op_id = self._take_op()
        new_state = (log.head, new_tail)
        if self.journaling:
            if runs:
                self.io.sync(log.fd, f"{label}.copy")
            op = jn.OpRecord(kind, op_id, self.flush_counter, index,
                             cold=new_state if kind == jn.OpKind.COLD_GC else None,
                             vlog=new_state if kind == jn.OpKind.VLOG_GC else None)
            self.gj.write_body(op)
            self.gj.commit(op_id)
        t1 = time.perf_counter()
        lookup_time = self.timers.totals["GC-Lookup"] - lookup_time0
        self.timers.add("GC-RW", t1 - t0 - lookup_time)
        if index:
            self.lsm.write_batch(index)
            if self.journaling:
                self.lsm.sync()
        t2 = time.perf_counter()
        self.timers.add("Meta-GC", t2 - t1)
        stats.operations += 1
        stats.bytes_rewritten += sum(len(b) for b in blobs)
        stats.index_updates += len(index)
        log.tail = new_tail
        if self.journaling:
            self.gj.free(op_id)
        self._maybe_checkpoint()
        return True

    @staticmethod
    def _reclaim(log, want: int, once) -> bool:
        """Tail GC passes until ``log.free >= want``.

        Gives up after one lap: a log full of live data only rotates under GC.
        """
        stop = log.tail + log.used
        while log.free < want:
            if log.tail >= stop or not once():
                return False
        return True

    def _vlog_gc_once(self) -> bool:
        return self._log_gc_once(self.vlog.log, self.vlog.chunk_bytes, self.vlog_gc_stats, jn.OpKind.VLOG_GC, "vgc")

    def _cold_gc_once(self) -> bool:
        return self._log_gc_once(self.seg.cold, self.cfg.cold_log_chunk_bytes, self.cold_gc_stats,
                                 jn.OpKind.COLD_GC, "cgc")

    def gc(self, rounds: int = 1) -> int:
        """Force up to ``rounds`` GC operations on the active backend; returns how many ran."""
        ran = 0
        for _ in range(rounds):
            if self.seg is not None:
                try:
                    g = self.selector.select(self.seg.groups, self.flush_counter, self.seg.main_size)
                except NothingToCollect:
                    break
                self.gc_group(g)
            elif self.vlog is not None:
                if not self._vlog_gc_once():
                    break
            else:
                break
            ran += 1
        return ran

    def compact(self) -> dict:
        """Manual full LSM compaction."""
        return self.lsm.compact_all()

    # ------------------------------------------------------------- reads
    def _read_location(self, key: bytes, loc: ValueLocation) -> bytes:
        if loc.area == Area.VLOG:
            rec = self.vlog.read(loc)
        else:
            rec = self.seg.read(loc)
        if rec.key != key or rec.flags:
            raise CorruptRecord(f"index entry for {key!r} points at {rec.key!r} (flags {rec.flags}) at {loc}")
        return rec.value

    def _resolve(self, key: bytes, e: Optional[IndexEntry]) -> Optional[bytes]:
        if e is None or e.kind == Kind.TOMBSTONE:
            return None
        if e.kind == Kind.INLINE:
            return e.value
        return self._read_location(key, e.location)

    def get(self, key: bytes) -> Optional[bytes]:
        v = self.cache.get(key)
        if v is not MISS:
            self.counters["cache_hits"] += 1
            return v
        return self._resolve(key, self.lsm.get(key))

    def __contains__(self, key: bytes) -> bool:
        return self.get(key) is not None

    def _merged(self, start: Optional[bytes], end: Optional[bytes]) -> Iterator[tuple[bytes, object]]:
        """(key, cached value | IndexEntry) in key order; cache entries shadow the index."""
        cached = self.cache.sorted_items(start, end)
        ci = 0
        for key, e in self.lsm.iter_range(start, end):
            while ci < len(cached) and cached[ci][0] < key:
                if cached[ci][1] is not None:
                    yield cached[ci]
                ci += 1
            if ci < len(cached) and cached[ci][0] == key:
                if cached[ci][1] is not None:
                    yield cached[ci]
                ci += 1
                continue
            yield key, e
        for k, v in cached[ci:]:
            if v is not None:
                yield k, v

    def scan(self, start: bytes = b"", count: Optional[int] = None, end: Optional[bytes] = None,
             readahead: bool = True) -> list[tuple[bytes, bytes]]:
        """Up to ``count`` pairs with ``start <= key < end`` in key order."""
        if count is not None and count <= 0:
            return []
        picked = []
        for item in self._merged(start or None, end):
            picked.append(item)
            if count is not None and len(picked) >= count:
                break
        if readahead:
            self._prefetch(e for _k, e in picked if isinstance(e, IndexEntry))
        out = []
        for k, e in picked:
            if isinstance(e, IndexEntry):
                v = self._resolve(k, e)
                if v is None:
                    continue
                out.append((k, v))
            else:
                out.append((k, e))
        self.counters["scans"] += 1
        return out

    def _prefetch(self, entries) -> None:
        for e in entries:
            if e.kind != Kind.LOCATION:
                continue
            loc = e.location
            if loc.area == Area.VLOG:
                fadvise_willneed(self.vlog.fd, self.vlog.physical(loc), loc.length)
            else:
                fadvise_willneed(self.seg.fd, self.seg.physical(loc), loc.length)

    def drop_page_cache(self) -> None:
        """Ask the kernel to evict cached pages of every value file and SSTable."""
        for fd in self.value_files() + [t.fd for t in self.lsm.all_tables()]:
            fadvise_dontneed(fd)

    def value_files(self) -> list[int]:
        fds = []
        if self.seg is not None:
            fds.append(self.seg.fd)
        if self.vlog is not None:
            fds.append(self.vlog.fd)
        return fds

    # ------------------------------------------------------------- stats
    def stats(self) -> dict:
        out = {
            "backend": self.backend,
            "device": self.io.snapshot(),
            "counters": dict(self.counters),
            "gc": self.gc_stats.as_dict(),
            "vlog_gc": self.vlog_gc_stats.as_dict(),
            "cold_gc": self.cold_gc_stats.as_dict(),
            "timers": self.timers.snapshot(),
            "lsm": dict(self.lsm.stats),
            "flush_counter": self.flush_counter,
        }
        if self.seg is not None:
            out["utilization"] = self.seg.utilization()
            out["free_log_segments"] = len(self.seg.free)
            out["group_records"] = [gs.records for gs in self.seg.groups]
            if self.seg.cold is not None:
                out["cold_used"] = self.seg.cold.used
        if self.vlog is not None:
            out["vlog_used"] = self.vlog.log.used
        return out

    def gc_lookups(self) -> int:
        return self.gc_stats.lsm_lookups + self.vlog_gc_stats.lsm_lookups

    # --------------------------------------------------------- lifecycle
    def close(self) -> None:
        if self.closed:
            return
        self.flush()
        self.checkpoint()
        self.lsm.close()
        self._close_files()
        self.io.write_file_atomic(self._path(CLEAN), b"clean\n", "checkpoint", "clean", sync=self.journaling)
        self.closed = True

    def _close_files(self) -> None:
        if self.seg is not None:
            self.seg.close()
        if self.vlog is not None:
            self.vlog.close()
        self.wj.close()
        self.gj.close()
        if self._pool is not None:
            self._pool.shutdown(wait=True)
            self._pool = None

    def abandon(self) -> None:
        """Drop every handle without flushing or checkpointing, as a crash would."""
        if self.closed:
            return
        self.lsm.abandon()
        self._close_files()
        self.closed = True

    def __enter__(self) -> "Store":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        if exc_type is None:
            self.close()
        else:
            try:
                self.abandon()
            except StoreError:
                pass


def open_store(config: StoreConfig, io: Optional[DeviceIO] = None) -> Store:
    return Store(config, io)
