"""Segment-group GC: victim selection and the scan-based rewrite plan.

Validity comes from the group itself: for each key, the record nearest the
group end is the latest version.  Nothing here reads the LSM index.
"""

from __future__ import annotations

import heapq
import random
import zlib
from dataclasses import dataclass, field
from typing import Container, Optional

from .errors import GcAbort, NothingToCollect
from .journal import Move, MoveKind
from .metrics import GcStats
from .record import FLAG_COLD, FLAG_TOMBSTONE, encode_record
from .segments import GroupState, SegmentStore


def cba_score(u: float, age: float) -> float:
    return (1.0 - u) * age / (1.0 + u)


class GroupSelector:
    """Chooses the next GC victim among groups that hold at least one log segment."""

    def __init__(self, policy: str = "greedy", gra_d: int = 5, seed: int = 1):
        self.policy = policy
        self.gra_d = gra_d
        self.rng = random.Random(seed)
        self._heap: list = []

    def rebuild(self, groups: list[GroupState]) -> None:
        self._heap = [(-gs.write_bytes, g) for g, gs in enumerate(groups)]
        heapq.heapify(self._heap)

    def touch(self, g: int, write_bytes: int) -> None:
        heapq.heappush(self._heap, (-write_bytes, g))

    def select(self, groups: list[GroupState], flush_counter: int = 0, main_size: int = 1,
               exclude: Container[int] = ()) -> int:
        eligible = [g for g, gs in enumerate(groups) if gs.logs and g not in exclude]
        if not eligible:
            raise NothingToCollect("no segment group holds a log segment")
        if self.policy == "greedy":
            return self._greedy(groups, exclude)
        if self.policy == "random":
            return self.rng.choice(eligible)
        if self.policy == "gra":
            ranked = sorted(eligible, key=lambda g: (-groups[g].write_bytes, g))
            return self.rng.choice(ranked[:self.gra_d])
        if self.policy == "cba":
            best, best_score = None, -1.0
            for g in eligible:
                gs = groups[g]
                extent = gs.extent()
                live = gs.live_bytes if gs.live_bytes >= 0 else min(extent, main_size)
                u = min(1.0, live / extent) if extent else 1.0
                s = cba_score(u, flush_counter - gs.last_gc_flush)
                if s > best_score:
                    best, best_score = g, s
            return best
        raise ValueError(f"unknown GC policy {self.policy!r}")

    def _greedy(self, groups, exclude) -> int:
        if len(self._heap) > 4 * len(groups) + 64:
            self.rebuild(groups)
        held = []
        chosen = None
        while self._heap:
            negwb, g = heapq.heappop(self._heap)
            gs = groups[g]
            if -negwb != gs.write_bytes:
                continue  # stale entry
            held.append((negwb, g))
            if gs.logs and g not in exclude:
                chosen = g
                break
        for item in held:
            heapq.heappush(self._heap, item)
        if chosen is None:
            # heap lost track of some group; rebuild once and retry by brute force
            self.rebuild(groups)
            cands = [g for g, gs in enumerate(groups) if gs.logs and g not in exclude]
            if not cands:
                raise NothingToCollect("no segment group holds a log segment")
            chosen = min(cands, key=lambda g: (-groups[g].write_bytes, g))
        return chosen


@dataclass
class KeyInfo:
    newest: int          # index into GroupScan.records
    versions: int
    flags: int


@dataclass
class GroupScan:
    group: int
    # (absolute offset, flags, key, length, segment buffer, offset in buffer)
    records: list = field(default_factory=list)
    keys: dict = field(default_factory=dict)
    shadowed: set = field(default_factory=set)
    scanned_bytes: int = 0

    @property
    def live_bytes(self) -> int:
        total = 0
        for k, info in self.keys.items():
            if k in self.shadowed or info.flags & FLAG_TOMBSTONE:
                continue
            total += self.records[info.newest][3]
        return total

    def dead(self, key: bytes) -> bool:
        return bool(self.keys[key].flags & FLAG_TOMBSTONE)

    def valid_offsets(self) -> dict:
        """key -> absolute offset of its live record (tombstoned and shadowed keys excluded)."""
        return {k: self.records[i.newest][0] for k, i in self.keys.items()
                if not (i.flags & FLAG_TOMBSTONE) and k not in self.shadowed}


def scan_group(seg: SegmentStore, g: int, cache: Container[bytes] = ()) -> GroupScan:
    scan = GroupScan(g)
    try:
        for rec in seg.scan_group_records(g):
            abs_off, flags, key, length = rec[0], rec[1], rec[2], rec[3]
            idx = len(scan.records)
            scan.records.append(rec)
            scan.scanned_bytes += length
            info = scan.keys.get(key)
            if info is None:
                scan.keys[key] = KeyInfo(idx, 1, flags)
            else:
                info.newest = idx
                info.versions += 1
                info.flags = flags
    except Exception as exc:  # a decode failure mid-segment
        raise GcAbort(f"group {g}: scan failed: {exc}") from exc
    if scan.scanned_bytes != seg.extent(g):
        raise GcAbort(f"group {g}: scanned {scan.scanned_bytes} bytes but the table says {seg.extent(g)}")
    for k in scan.keys:
        if k in cache:
            scan.shadowed.add(k)
    return scan


@dataclass
class GcPlan:
    group: int
    scan: GroupScan
    moves: list = field(default_factory=list)       # MOVE/TAG moves, in write order
    cold: list = field(default_factory=list)        # COLD moves (new filled in once placed)
    cold_blobs: list = field(default_factory=list)
    runs: list = field(default_factory=list)        # (absolute offset, bytes)
    new_state: Optional[GroupState] = None
    freed: list = field(default_factory=list)
    terminator: int = -1
    stats: GcStats = field(default_factory=GcStats)


def _pack(sizes: list[int], caps: list[int]) -> list[tuple[int, int]]:
    """Next-fit placement of ``sizes`` over segments of ``caps``; returns (segment index, offset)."""
    out = []
    seg, used = 0, 0
    for n in sizes:
        if used + n > caps[seg]:
            seg += 1
            used = 0
            if seg >= len(caps):
                raise GcAbort("rewrite does not fit in the group's current segments")
        out.append((seg, used))
        used += n
    return out


def plan_group_gc(seg: SegmentStore, g: int, cache: Container[bytes] = (), hotness: bool = False,
                  drop_shadowed: bool = True, allow_cold: bool = True) -> GcPlan:
    scan = scan_group(seg, g, cache)
    plan = GcPlan(g, scan)
    gs = seg.groups[g]
    segs = seg.segments(g)
    caps = [cap for _, _, cap in segs]
    starts = [start for start, _, _ in segs]

    items = []  # (kind, key, old abs, old length, new bytes)
    for i, (abs_off, flags, key, length, buf, off) in enumerate(scan.records):
        info = scan.keys[key]
        if info.newest != i or flags & FLAG_TOMBSTONE:
            continue
        shadowed = key in scan.shadowed
        if shadowed and drop_shadowed:
            continue
        if hotness and allow_cold and not flags & FLAG_COLD and info.versions == 1 and not shadowed:
            record = bytes(buf[off:off + length])
            plan.cold.append(Move(MoveKind.COLD, key, abs_off, -1, length, zlib.crc32(record), None, length))
            plan.cold_blobs.append(record)
            items.append((MoveKind.TAG, key, abs_off, length, encode_record(FLAG_COLD, key)))
        else:
            items.append((MoveKind.MOVE, key, abs_off, length, memoryview(buf)[off:off + length]))

    sizes = [len(b) for _, _, _, _, b in items]
    places = _pack(sizes, caps)
    last_seg = places[-1][0] if places else 0
    used = [0] * len(caps)
    for (s, o), n in zip(places, sizes):
        used[s] = o + n

    run_off = None
    run_parts: list = []
    run_end = None
    for (kind, key, old, old_len, blob), (s, o), n in zip(items, places, sizes):
        new = starts[s] + o
        if kind == MoveKind.MOVE and new == old:
            continue
        rec = bytes(blob)
        overlap = new < old + old_len and old < new + n
        payload = rec if (kind == MoveKind.TAG or overlap) else None
        plan.moves.append(Move(kind, key, old, new, n, zlib.crc32(rec), payload, old_len))
        if run_parts and new == run_end:
            run_parts.append(rec)
        else:
            if run_parts:
                plan.runs.append((run_off, b"".join(run_parts)))
            run_off, run_parts = new, [rec]
        run_end = new + n
    if run_parts:
        plan.runs.append((run_off, b"".join(run_parts)))

    keep_logs = last_seg  # log segments kept = index of the last used segment
    new = GroupState(
        main_used=used[0],
        logs=[[sid, used[i + 1]] for i, (sid, _) in enumerate(gs.logs[:keep_logs])],
        write_bytes=sum(used),
        records=len(items),
        live_bytes=sum(used),
        last_gc_flush=gs.last_gc_flush,
    )
    plan.new_state = new
    plan.freed = [sid for sid, _ in gs.logs[keep_logs:]]
    end_seg = keep_logs
    if caps[end_seg] - used[end_seg] >= 8:
        plan.terminator = starts[end_seg] + used[end_seg]

    st = plan.stats
    st.operations = 1
    st.bytes_scanned = scan.scanned_bytes
    st.records_scanned = len(scan.records)
    st.bytes_rewritten = sum(m.length for m in plan.moves)
    st.log_segments_freed = len(plan.freed)
    st.index_updates = sum(1 for m in plan.moves if m.kind == MoveKind.MOVE) + len(plan.cold)
    st.cold_bytes_moved = sum(m.length for m in plan.cold)
    return plan

