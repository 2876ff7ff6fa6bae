"""Hash-partitioned value storage.

One file, three regions::

    [main region: n_main x main_size][reserved region: n_log x log_size][cold region]

Group ``g`` owns main segment ``g`` plus an ordered list of log segments taken
from the shared reserved pool.  Records are appended in order and never split
across segments.  Space after the last record of a segment is either the
segment end or a zero header (terminator), so a decode-scan knows where live
data stops.
"""

from __future__ import annotations

import heapq
import os
import struct
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

from .config import SegmentGeometry
from .devio import DeviceIO
from .errors import CorruptRecord, IncompatibleStore, InvalidLocation, NeedsGC
from .record import (
    HEADER,
    HEADER_SIZE,
    TERMINATOR,
    Area,
    KVRecord,
    ValueLocation,
    decode_record,
    hash_group,
    iter_records,
)
from .write_cache import batch_ends


@dataclass(slots=True)
class GroupState:
    main_used: int = 0
    # [segment id, used bytes] in allocation order
    logs: list = field(default_factory=list)
    write_bytes: int = 0
    records: int = 0
    # bytes written back by the last GC; -1 before the first one
    live_bytes: int = -1
    last_gc_flush: int = 0

    def extent(self) -> int:
        return self.main_used + sum(u for _, u in self.logs)

    def copy(self) -> "GroupState":
        return GroupState(self.main_used, [list(x) for x in self.logs], self.write_bytes, self.records,
                          self.live_bytes, self.last_gc_flush)


_GROUP = struct.Struct("<IQQqQH")
_LOGREF = struct.Struct("<II")


def encode_group(gs: GroupState) -> bytes:
    out = [_GROUP.pack(gs.main_used, gs.write_bytes, gs.records, gs.live_bytes, gs.last_gc_flush, len(gs.logs))]
    out.extend(_LOGREF.pack(s, u) for s, u in gs.logs)
    return b"".join(out)


def decode_group(buf, pos: int) -> tuple[GroupState, int]:
    main_used, wb, recs, live, last, n = _GROUP.unpack_from(buf, pos)
    pos += _GROUP.size
    logs = []
    for _ in range(n):
        s, u = _LOGREF.unpack_from(buf, pos)
        logs.append([s, u])
        pos += _LOGREF.size
    return GroupState(main_used, logs, wb, recs, live, last), pos


class CircularLog:
    """Append-only circular region addressed by monotonically growing logical offsets.

    Physical position is ``base + offset % size``.  A record never wraps; if it
    does not fit before the physical end, the head skips to the next lap and a
    terminator marks the gap.
    """

    def __init__(self, fd: int, base: int, size: int, io: DeviceIO, area: Area, category: str = "value"):
        self.fd = fd
        self.base = base
        self.size = size
        self.io = io
        self.area = area
        self.category = category
        self.head = 0
        self.tail = 0

    @property
    def used(self) -> int:
        return self.head - self.tail

    @property
    def free(self) -> int:
        return self.size - (self.head - self.tail)

    def _room_needed(self, head: int, n: int) -> int:
        """Bytes consumed by appending ``n`` bytes at ``head`` (including a lap-skip gap)."""
        left = self.size - head % self.size
        return n if n <= left else left + n

    def space_for(self, sizes) -> int:
        h = self.head
        for n in sizes:
            h += self._room_needed(h, n)
        return h - self.head

    def place(self, blobs: list) -> tuple[list, list]:
        """Reserve space for ``blobs``; returns (locations, write runs). Raises NeedsGC if full."""
        need = self.space_for(len(b) for b in blobs)
        if need > self.free:
            raise NeedsGC(f"{self.area.name.lower()} log: need {need}, free {self.free}")
        locs = []
        runs = []
        run_start = None
        run_parts: list = []
        h = self.head
        for b in blobs:
            n = len(b)
            left = self.size - h % self.size
            if n > left:
                if run_parts:
                    runs.append((run_start, b"".join(run_parts)))
                    run_parts = []
                if left >= HEADER_SIZE:
                    runs.append((self.base + h % self.size, TERMINATOR))
                h += left
            if not run_parts:
                run_start = self.base + h % self.size
            locs.append(ValueLocation(self.area, h, n))
            run_parts.append(b)
            h += n
        if run_parts:
            data = b"".join(run_parts)
            left = self.size - h % self.size
            if h % self.size and left >= HEADER_SIZE and self.size - (h - self.tail) >= HEADER_SIZE:
                # never clobber the tail's first header
                data += TERMINATOR
            runs.append((run_start, data))
        self.head = h
        return locs, runs

    def write_runs(self, runs) -> None:
        for off, data in runs:
            self.io.pwrite(self.fd, data, off, self.category)

    def append(self, blobs: list) -> list:
        locs, runs = self.place(blobs)
        self.write_runs(runs)
        return locs

    def physical(self, loc: ValueLocation) -> int:
        if loc.offset < self.tail or loc.offset + loc.length > self.head:
            raise InvalidLocation(f"{loc} outside live range [{self.tail}, {self.head})")
        return self.base + loc.offset % self.size

    def read(self, loc: ValueLocation) -> KVRecord:
        data = self.io.pread(self.fd, loc.length, self.physical(loc))
        rec, n = decode_record(data)
        if n != loc.length:
            raise CorruptRecord(f"length mismatch at {loc}")
        return rec

    def read_chunk(self, limit: int) -> tuple[list, int]:
        """Decode records from the tail until ``limit`` bytes are covered or the head is reached.

        Returns ``([(logical offset, record bytes)], new tail)``.  A record that
        straddles the limit is taken whole.
        """
        out = []
        pos = self.tail
        end = min(self.head, self.tail + limit)
        buf = b""
        buf_start = pos
        size = self.size
        while pos < end:
            phys = pos % size
            left = size - phys
            if left < HEADER_SIZE:
                pos += left
                continue
            rel = pos - buf_start
            if len(buf) - rel < HEADER_SIZE:
                want = min(left, self.head - pos, max(end - pos, HEADER_SIZE))
                buf = self.io.pread(self.fd, want, self.base + phys)
                buf_start, rel = pos, 0
            _flags, ksz, _r, vsz = HEADER.unpack_from(buf, rel)
            if ksz == 0:
                # lap gap: skip to the start of the region
                pos += left
                continue
            n = HEADER_SIZE + ksz + vsz
            if len(buf) - rel < n:
                buf = self.io.pread(self.fd, n, self.base + phys)
                buf_start, rel = pos, 0
            out.append((pos, bytes(buf[rel:rel + n])))
            pos += n
        return out, pos


class SegmentStore:
    """Segment groups over one value-store file, plus the optional cold data log."""

    def __init__(self, path: str, geometry: SegmentGeometry, io: DeviceIO, with_cold: bool = False,
                 read_parallelism: int = 1):
        self.path = path
        self.geom = geometry
        self.io = io
        self.n_main = geometry.n_main
        self.main_size = geometry.main_size
        self.log_size = geometry.log_size
        self.n_log = geometry.n_log
        self.log_base = geometry.main_region
        cold_size = geometry.cold_size if with_cold else 0
        self.cold_base = self.log_base + geometry.reserved_region
        self.file_size = self.cold_base + cold_size
        self.fd = os.open(path, os.O_RDWR | os.O_CREAT, 0o644)
        if os.fstat(self.fd).st_size < self.file_size:
            os.ftruncate(self.fd, self.file_size)
        self.groups = [GroupState() for _ in range(self.n_main)]
        self.free: list[int] = list(range(self.n_log))
        heapq.heapify(self.free)
        self.cold: Optional[CircularLog] = None
        if cold_size:
            self.cold = CircularLog(self.fd, self.cold_base, cold_size, io, Area.COLD)
        self.read_parallelism = read_parallelism
        self._pool = ThreadPoolExecutor(read_parallelism) if read_parallelism > 1 else None

    # ------------------------------------------------------------ geometry
    def group_of(self, key: bytes) -> int:
        return hash_group(key, self.n_main)

    def main_start(self, g: int) -> int:
        return g * self.main_size

    def log_start(self, seg: int) -> int:
        return self.log_base + seg * self.log_size

    def segments(self, g: int, gs: Optional[GroupState] = None) -> list[tuple[int, int, int]]:
        """``(absolute start, used bytes, capacity)`` for the main segment then each log segment."""
        gs = gs or self.groups[g]
        out = [(self.main_start(g), gs.main_used, self.main_size)]
        for seg, used in gs.logs:
            out.append((self.log_start(seg), used, self.log_size))
        return out

    def capacities(self, g: int) -> list[int]:
        return [self.main_size] + [self.log_size] * len(self.groups[g].logs)

    def free_bytes(self) -> int:
        return len(self.free) * self.log_size

    def extent(self, g: int) -> int:
        return self.groups[g].extent()

    # ----------------------------------------------------------- appending
    def demand(self, g: int, sizes) -> int:
        """How many fresh log segments appending records of ``sizes`` to group ``g`` would take."""
        gs = self.groups[g]
        if gs.logs:
            used, cap = gs.logs[-1][1], self.log_size
        else:
            used, cap = gs.main_used, self.main_size
        new = 0
        for n in sizes:
            if used + n > cap:
                new += 1
                used, cap = 0, self.log_size
            used += n
        return new

    def place(self, g: int, blobs: list, batch_threshold: int = 0) -> tuple[list, list]:
        """Reserve space in group ``g`` for ``blobs``; returns (locations, write runs).

        Runs break at segment switches and, when ``batch_threshold`` is set, at
        batch boundaries.  Only the final run carries the terminator, so runs
        never overlap and may be written in any order.  Raises NeedsGC if a log
        segment is needed and the free list is empty (nothing is changed then).
        """
        if self.demand(g, (len(b) for b in blobs)) > len(self.free):
            raise NeedsGC(f"group {g}: free log segments exhausted")
        ends = set(batch_ends([len(b) for b in blobs], batch_threshold)) if batch_threshold else set()
        gs = self.groups[g]
        locs = []
        runs = []
        if gs.logs:
            seg_start, used, cap = self.log_start(gs.logs[-1][0]), gs.logs[-1][1], self.log_size
        else:
            seg_start, used, cap = self.main_start(g), gs.main_used, self.main_size
        run_off = seg_start + used
        parts: list = []
        total = 0

        def commit_used(u):
            if gs.logs:
                gs.logs[-1][1] = u
            else:
                gs.main_used = u

        for i, b in enumerate(blobs):
            n = len(b)
            if used + n > cap:
                if parts:
                    runs.append((run_off, b"".join(parts)))
                    parts = []
                commit_used(used)
                seg = heapq.heappop(self.free)
                gs.logs.append([seg, 0])
                seg_start, used, cap = self.log_start(seg), 0, self.log_size
                run_off = seg_start
            locs.append(ValueLocation(Area.SEGMENT, seg_start + used, n))
            parts.append(b)
            used += n
            total += n
            if i + 1 in ends and i + 1 < len(blobs):
                runs.append((run_off, b"".join(parts)))
                parts = []
                run_off = seg_start + used
        commit_used(used)
        if parts:
            data = b"".join(parts)
            if cap - used >= HEADER_SIZE:
                data += TERMINATOR
            runs.append((run_off, data))
        gs.write_bytes += total
        gs.records += len(blobs)
        return locs, runs

    def write_runs(self, runs) -> None:
        for off, data in runs:
            self.io.pwrite(self.fd, data, off, "value")

    def append_group(self, g: int, blobs: list) -> list:
        locs, runs = self.place(g, blobs)
        self.write_runs(runs)
        return locs

    # ------------------------------------------------------------- reading
    def read(self, loc: ValueLocation) -> KVRecord:
        if loc.area == Area.COLD:
            if self.cold is None:
                raise InvalidLocation("store has no cold data log")
            return self.cold.read(loc)
        if loc.area != Area.SEGMENT:
            raise InvalidLocation(f"not a segment-store location: {loc}")
        if loc.offset + loc.length > self.cold_base or loc.length < HEADER_SIZE + 1:
            raise InvalidLocation(f"{loc} out of bounds")
        data = self.io.pread(self.fd, loc.length, loc.offset)
        rec, n = decode_record(data)
        if n != loc.length:
            raise CorruptRecord(f"length mismatch at {loc}")
        return rec

    def physical(self, loc: ValueLocation) -> int:
        if loc.area == Area.COLD:
            return self.cold.physical(loc)
        return loc.offset

    def read_group(self, g: int) -> list[tuple[int, bytes]]:
        """Raw bytes of every used segment of the group, main segment first."""
        segs = [(start, used) for start, used, _ in self.segments(g) if used]
        if self._pool is not None and len(segs) > 1:
            datas = list(self._pool.map(lambda s: self.io.pread(self.fd, s[1], s[0]), segs))
        else:
            datas = [self.io.pread(self.fd, used, start) for start, used in segs]
        return [(start, d) for (start, _), d in zip(segs, datas)]

    def scan_group_records(self, g: int):
        """Yield ``(absolute offset, flags, key, length, segment bytes, offset in segment)`` in write order."""
        for start, data in self.read_group(g):
            for off, flags, key, length in iter_records(data):
                yield start + off, flags, key, length, data, off

    # ----------------------------------------------------- releasing space
    def release_log_segments(self, g: int, keep: int) -> list[int]:
        gs = self.groups[g]
        freed = [seg for seg, _ in gs.logs[keep:]]
        del gs.logs[keep:]
        self.stamp_free(freed)
        for seg in freed:
            heapq.heappush(self.free, seg)
        return freed

    def install_group(self, g: int, state: GroupState, freed: list) -> None:
        """Swap in a post-GC group state and return ``freed`` segments to the pool."""
        self.groups[g] = state
        self.stamp_free(freed)
        for seg in freed:
            heapq.heappush(self.free, seg)

    def stamp_free(self, segs) -> None:
        for seg in segs:
            self.io.pwrite(self.fd, TERMINATOR, self.log_start(seg), "value")

    def write_terminator(self, g: int) -> None:
        gs = self.groups[g]
        if gs.logs:
            start, used, cap = self.log_start(gs.logs[-1][0]), gs.logs[-1][1], self.log_size
        else:
            start, used, cap = self.main_start(g), gs.main_used, self.main_size
        if cap - used >= HEADER_SIZE:
            self.io.pwrite(self.fd, TERMINATOR, start + used, "value")

    def sync(self, label: str = "values") -> None:
        self.io.sync(self.fd, label)

    # --------------------------------------------------------- accounting
    def rebuild_free_list(self) -> None:
        owned = {seg for gs in self.groups for seg, _ in gs.logs}
        self.free = [s for s in range(self.n_log) if s not in owned]
        heapq.heapify(self.free)

    def check_exclusive(self) -> None:
        seen: dict[int, str] = {}
        for g, gs in enumerate(self.groups):
            for seg, used in gs.logs:
                if seg in seen:
                    raise CorruptRecord(f"log segment {seg} listed by {seen[seg]} and group {g}")
                if not 0 <= seg < self.n_log:
                    raise CorruptRecord(f"group {g} lists out-of-range log segment {seg}")
                seen[seg] = f"group {g}"
        for seg in self.free:
            if seg in seen:
                raise CorruptRecord(f"log segment {seg} is both free and in {seen[seg]}")
            seen[seg] = "free list"
        if len(seen) != self.n_log:
            raise CorruptRecord(f"{self.n_log - len(seen)} log segments are neither owned nor free")

    def stored_bytes(self) -> int:
        return sum(gs.extent() for gs in self.groups)

    def allocated_bytes(self) -> int:
        return self.n_main * self.main_size + sum(len(gs.logs) for gs in self.groups) * self.log_size

    def utilization(self) -> float:
        """Valid + invalid bytes stored over the whole main + reserved space."""
        return self.stored_bytes() / float(self.geom.provisioned)

    # -------------------------------------------------------- checkpoints
    def encode_state(self) -> bytes:
        parts = [struct.pack("<II", self.n_main, self.n_log)]
        parts.extend(encode_group(gs) for gs in self.groups)
        if self.cold is not None:
            parts.append(struct.pack("<BQQ", 1, self.cold.head, self.cold.tail))
        else:
            parts.append(struct.pack("<B", 0))
        return b"".join(parts)

    def decode_state(self, buf, pos: int = 0) -> int:
        n_main, n_log = struct.unpack_from("<II", buf, pos)
        if n_main != self.n_main or n_log != self.n_log:
            raise IncompatibleStore(f"checkpoint geometry {n_main}x{n_log} != configured {self.n_main}x{self.n_log}")
        pos += 8
        groups = []
        for _ in range(n_main):
            gs, pos = decode_group(buf, pos)
            groups.append(gs)
        self.groups = groups
        (has_cold,) = struct.unpack_from("<B", buf, pos)
        pos += 1
        if has_cold:
            head, tail = struct.unpack_from("<QQ", buf, pos)
            pos += 16
            if self.cold is not None:
                self.cold.head, self.cold.tail = head, tail
        self.rebuild_free_list()
        return pos

    def state_crc(self) -> int:
        return zlib.crc32(self.encode_state())

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown(wait=True)
            self._pool = None
        if self.fd >= 0:
            os.close(self.fd)
            self.fd = -1
