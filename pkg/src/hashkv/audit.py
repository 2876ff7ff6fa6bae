"""Offline consistency checks over an open store. Used by tests and the CLI."""

from __future__ import annotations

from .errors import CorruptRecord
from .lsm.entry import Kind
from .record import FLAG_COLD, HEADER_SIZE, TERMINATOR, Area, hash_group, iter_records


def audit(store) -> list[str]:
    """Return a list of problems; an empty list means the store is consistent."""
    problems: list[str] = []
    seg = store.seg
    if seg is not None:
        try:
            seg.check_exclusive()
        except CorruptRecord as exc:
            problems.append(str(exc))
        problems += _audit_groups(store)
        for s in seg.free:
            if store.io.pread(seg.fd, HEADER_SIZE, seg.log_start(s)) != TERMINATOR:
                problems.append(f"free log segment {s} is not stamped")
        if seg.cold is not None:
            problems += _audit_log(seg.cold, "cold log")
    if store.vlog is not None:
        problems += _audit_log(store.vlog.log, "vlog")
    problems += _audit_index(store)
    return problems


def _audit_groups(store) -> list[str]:
    seg = store.seg
    out = []
    for g, gs in enumerate(seg.groups):
        parts = seg.segments(g)
        for i, (start, used, cap) in enumerate(parts):
            data = store.io.pread(seg.fd, cap, start)
            end = 0
            # only the group's final segment needs an end marker
            if i == len(parts) - 1 and cap - used >= HEADER_SIZE and data[used:used + HEADER_SIZE] != TERMINATOR:
                out.append(f"group {g}: no terminator at {start + used}")
            try:
                for off, _flags, key, length in iter_records(data, 0, used):
                    if hash_group(key, seg.n_main) != g:
                        out.append(f"group {g}: key {key!r} at {start + off} hashes elsewhere")
                    end = off + length
            except CorruptRecord as exc:
                out.append(f"group {g}: {exc}")
                continue
            if end != used:
                out.append(f"group {g}: segment at {start} decodes {end} bytes, table says {used}")
    return out


def _audit_log(log, name: str) -> list[str]:
    out = []
    pos = log.tail
    while pos < log.head:
        _recs, new_tail = _chunk(log, pos)
        if new_tail <= pos:
            out.append(f"{name}: stuck at {pos}")
            break
        pos = new_tail
    if pos != log.head:
        out.append(f"{name}: decoding ended at {pos}, head is {log.head}")
    return out


def _chunk(log, pos):
    saved = log.tail
    log.tail = pos
    try:
        return log.read_chunk(1 << 20)
    finally:
        log.tail = saved


def _audit_index(store) -> list[str]:
    out = []
    seg = store.seg
    for key, e in store.lsm.iter_range():
        if e.kind != Kind.LOCATION:
            continue
        loc = e.location
        try:
            if loc.area == Area.VLOG:
                if store.vlog is None:
                    raise CorruptRecord("vlog location without a vlog")
                rec = store.vlog.read(loc)
            else:
                if seg is None:
                    raise CorruptRecord("segment location without a segment store")
                rec = seg.read(loc)
        except Exception as exc:
            out.append(f"index entry for {key!r} at {loc}: {exc}")
            continue
        if rec.key != key:
            out.append(f"index entry for {key!r} at {loc} holds {rec.key!r}")
        elif rec.flags & FLAG_COLD:
            out.append(f"index entry for {key!r} points at a cold tag")
        elif loc.area == Area.SEGMENT and not _inside_group(seg, hash_group(key, seg.n_main), loc.offset):
            out.append(f"index entry for {key!r} at {loc.offset} lies outside group")
    return out


def _inside_group(seg, g: int, offset: int) -> bool:
    return any(start <= offset < start + used for start, used, _cap in seg.segments(g))

