"""Write and GC journals, plus the segment-table checkpoint file.

Journal file = sequence of framed records::

    [magic:u16 = 0x4A52][type:u8][0:u8][op id:u64][payload length:u32][crc32:u32][payload]

``type`` is BODY, COMMIT or FREE.  The CRC covers type, op id and payload.
An operation counts at recovery only if its BODY and COMMIT both verify; a
FREE record means its index updates are already durable.  BODY records carry
the post-operation segment-table state of every group the operation touched,
so ``checkpoint + committed bodies`` reproduces the in-memory table.
"""

from __future__ import annotations

import enum
import os
import struct
import zlib
from dataclasses import dataclass, field
from typing import Optional

from .devio import DeviceIO
from .errors import CorruptRecord, IncompatibleStore, RecoveryFailed
from .lsm.entry import decode_entry, encode_entry
from .segments import GroupState, decode_group, encode_group

_FRAME = struct.Struct("<HBBQII")
_MAGIC = 0x4A52


class RecType(enum.IntEnum):
    BODY = 1
    COMMIT = 2
    FREE = 3


class OpKind(enum.IntEnum):
    FLUSH = 1
    GC = 2
    COLD_GC = 3
    VLOG_GC = 4


class MoveKind(enum.IntEnum):
    MOVE = 0   # valid record copied within its group
    TAG = 1    # tag record written into the group (payload carried)
    COLD = 2   # record copied into the cold data log


@dataclass
class Move:
    kind: int
    key: bytes
    old: int          # absolute offset of the source record in the value-store file
    new: int          # absolute offset (MOVE/TAG) or cold-log logical offset (COLD)
    length: int       # bytes written at ``new``
    crc: int
    payload: Optional[bytes] = None
    old_length: int = 0


@dataclass
class OpRecord:
    kind: int
    op_id: int = 0
    flush_counter: int = 0
    index: list = field(default_factory=list)        # [(key, IndexEntry)]
    groups: dict = field(default_factory=dict)       # g -> GroupState (post-op)
    cold: Optional[tuple] = None                     # (head, tail)
    vlog: Optional[tuple] = None                     # (head, tail)
    gc_group: int = -1
    moves: list = field(default_factory=list)
    freed: list = field(default_factory=list)        # log segments released by a GC
    terminator: int = -1                             # absolute offset for the post-GC terminator


_U8 = struct.Struct("<B")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_HT = struct.Struct("<QQ")
_MOVE = struct.Struct("<BBQQIIIB")


def encode_op(op: OpRecord) -> bytes:
    out = [struct.pack("<BQ", op.kind, op.flush_counter), _U32.pack(len(op.index))]
    out.extend(encode_entry(k, e) for k, e in op.index)
    out.append(_U32.pack(len(op.groups)))
    for g in sorted(op.groups):
        out.append(_U32.pack(g))
        out.append(encode_group(op.groups[g]))
    for ht in (op.cold, op.vlog):
        if ht is None:
            out.append(_U8.pack(0))
        else:
            out.append(_U8.pack(1) + _HT.pack(*ht))
    if op.kind == OpKind.GC:
        out.append(struct.pack("<iqI", op.gc_group, op.terminator, len(op.moves)))
        for m in op.moves:
            has = m.payload is not None
            out.append(_MOVE.pack(m.kind, len(m.key), m.old, m.new, m.length, m.crc, m.old_length, int(has)))
            out.append(m.key)
            if has:
                out.append(m.payload)
        out.append(_U32.pack(len(op.freed)))
        out.extend(_U32.pack(s) for s in op.freed)
    return b"".join(out)


def decode_op(buf, op_id: int) -> OpRecord:
    kind, fc = struct.unpack_from("<BQ", buf, 0)
    pos = 9
    op = OpRecord(kind, op_id, fc)
    (n,) = _U32.unpack_from(buf, pos)
    pos += 4
    for _ in range(n):
        k, e, pos = decode_entry(buf, pos)
        op.index.append((k, e))
    (n,) = _U32.unpack_from(buf, pos)
    pos += 4
    for _ in range(n):
        (g,) = _U32.unpack_from(buf, pos)
        gs, pos = decode_group(buf, pos + 4)
        op.groups[g] = gs
    hts = []
    for _ in range(2):
        (flag,) = _U8.unpack_from(buf, pos)
        pos += 1
        if flag:
            hts.append(_HT.unpack_from(buf, pos))
            pos += _HT.size
        else:
            hts.append(None)
    op.cold, op.vlog = hts
    if kind == OpKind.GC:
        op.gc_group, op.terminator, n = struct.unpack_from("<iqI", buf, pos)
        pos += 16
        for _ in range(n):
            mk, kl, old, new, ln, crc, old_len, has = _MOVE.unpack_from(buf, pos)
            pos += _MOVE.size
            key = bytes(buf[pos:pos + kl])
            pos += kl
            payload = None
            if has:
                payload = bytes(buf[pos:pos + ln])
                pos += ln
            op.moves.append(Move(mk, key, old, new, ln, crc, payload, old_len))
        (n,) = _U32.unpack_from(buf, pos)
        pos += 4
        op.freed = list(struct.unpack_from(f"<{n}I", buf, pos))
    return op


@dataclass
class JournalEntry:
    op_id: int
    body: Optional[OpRecord] = None
    committed: bool = False
    freed: bool = False


class Journal:
    """One append-only journal file."""

    def __init__(self, path: str, io: DeviceIO, durable: bool, label: str):
        self.path = path
        self.io = io
        self.durable = durable
        self.label = label
        self.fd = os.open(path, os.O_RDWR | os.O_CREAT, 0o644)
        self.end = os.fstat(self.fd).st_size

    def _frame(self, rtype: int, op_id: int, payload: bytes) -> bytes:
        crc = zlib.crc32(payload, zlib.crc32(struct.pack("<BQ", rtype, op_id)))
        return _FRAME.pack(_MAGIC, rtype, 0, op_id, len(payload), crc) + payload

    def _append(self, data: bytes, torn_label: Optional[str] = None) -> None:
        if torn_label is not None:
            self.io.torn_pwrite(self.fd, data, self.end, "journal", torn_label)
        else:
            self.io.pwrite(self.fd, data, self.end, "journal")
        self.end += len(data)

    def write_body(self, op: OpRecord) -> None:
        self._append(self._frame(RecType.BODY, op.op_id, encode_op(op)), f"{self.label}.body")
        self.io.crash_point(f"{self.label}.body-written")

    def commit(self, op_id: int) -> None:
        self._append(self._frame(RecType.COMMIT, op_id, b""), f"{self.label}.commit")
        if self.durable:
            self.io.sync(self.fd, f"{self.label}.commit")

    def free(self, op_id: int) -> None:
        self._append(self._frame(RecType.FREE, op_id, b""))
        self.io.crash_point(f"{self.label}.freed")

    def read(self) -> list[JournalEntry]:
        """Parse the file. A torn or corrupt tail is ignored unless a valid COMMIT follows it."""
        size = os.fstat(self.fd).st_size
        data = os.pread(self.fd, size, 0) if size else b""
        entries: dict[int, JournalEntry] = {}
        pos = 0
        while pos + _FRAME.size <= len(data):
            magic, rtype, _z, op_id, n, crc = _FRAME.unpack_from(data, pos)
            body = data[pos + _FRAME.size:pos + _FRAME.size + n]
            ok = magic == _MAGIC and len(body) == n and rtype in (1, 2, 3)
            if ok:
                ok = zlib.crc32(body, zlib.crc32(struct.pack("<BQ", rtype, op_id))) == crc
            if not ok:
                if magic == _MAGIC and len(body) == n and self._commit_follows(data, pos + _FRAME.size + n, op_id):
                    raise RecoveryFailed(f"{self.path}: corrupt record for committed op {op_id} at offset {pos}")
                break
            ent = entries.setdefault(op_id, JournalEntry(op_id))
            if rtype == RecType.BODY:
                try:
                    ent.body = decode_op(body, op_id)
                except (struct.error, ValueError, CorruptRecord) as exc:
                    raise RecoveryFailed(f"{self.path}: undecodable body for op {op_id}: {exc}") from exc
            elif rtype == RecType.COMMIT:
                if ent.body is None:
                    raise RecoveryFailed(f"{self.path}: commit without body for op {op_id}")
                ent.committed = True
            else:
                ent.freed = True
            pos += _FRAME.size + n
        self.end = pos
        if pos < size:
            os.ftruncate(self.fd, pos)
        return [entries[k] for k in sorted(entries)]

    @staticmethod
    def _commit_follows(data: bytes, pos: int, op_id: int) -> bool:
        if pos + _FRAME.size > len(data):
            return False
        magic, rtype, _z, oid, n, crc = _FRAME.unpack_from(data, pos)
        if magic != _MAGIC or rtype != RecType.COMMIT or oid != op_id or n != 0:
            return False
        return zlib.crc32(b"", zlib.crc32(struct.pack("<BQ", rtype, oid))) == crc

    def truncate(self) -> None:
        os.ftruncate(self.fd, 0)
        self.end = 0
        if self.durable:
            self.io.sync(self.fd, f"{self.label}.truncate")

    def close(self) -> None:
        if self.fd >= 0:
            os.close(self.fd)
            self.fd = -1


# --------------------------------------------------------------- checkpoint
CKPT_MAGIC = b"HKVCKPT1"
CKPT_VERSION = 1
_CKPT_HEAD = struct.Struct("<8sIQQQB")


@dataclass
class Checkpoint:
    epoch: int = 0
    last_op_id: int = 0
    flush_counter: int = 0
    segments: Optional[bytes] = None   # SegmentStore.encode_state()
    vlog: Optional[tuple] = None       # (head, tail)


def encode_checkpoint(c: Checkpoint) -> bytes:
    flags = (1 if c.segments is not None else 0) | (2 if c.vlog is not None else 0)
    parts = [_CKPT_HEAD.pack(CKPT_MAGIC, CKPT_VERSION, c.epoch, c.last_op_id, c.flush_counter, flags)]
    if c.segments is not None:
        parts.append(_U32.pack(len(c.segments)) + c.segments)
    if c.vlog is not None:
        parts.append(_HT.pack(*c.vlog))
    body = b"".join(parts)
    return body + _U32.pack(zlib.crc32(body))


def decode_checkpoint(data: bytes) -> Checkpoint:
    if len(data) < _CKPT_HEAD.size + 4 or zlib.crc32(data[:-4]) != _U32.unpack_from(data, len(data) - 4)[0]:
        raise RecoveryFailed("segment-table checkpoint fails its checksum")
    magic, version, epoch, last, fc, flags = _CKPT_HEAD.unpack_from(data, 0)
    if magic != CKPT_MAGIC or version != CKPT_VERSION:
        raise IncompatibleStore(f"checkpoint version {magic!r}/{version} not supported")
    pos = _CKPT_HEAD.size
    c = Checkpoint(epoch, last, fc)
    if flags & 1:
        (n,) = _U32.unpack_from(data, pos)
        c.segments = data[pos + 4:pos + 4 + n]
        pos += 4 + n
    if flags & 2:
        c.vlog = _HT.unpack_from(data, pos)
    return c


def write_checkpoint(path: str, c: Checkpoint, io: DeviceIO, durable: bool) -> None:
    io.write_file_atomic(path, encode_checkpoint(c), "checkpoint", "checkpoint", sync=durable)


def read_checkpoint(path: str) -> Optional[Checkpoint]:
    if not os.path.exists(path):
        return None
    with open(path, "rb") as f:
        return decode_checkpoint(f.read())


def merge_entries(*journals: list) -> list[JournalEntry]:
    """Combine parsed journals into one op-id ordered list."""
    out = [e for j in journals for e in j]
    out.sort(key=lambda e: e.op_id)
    return out


def copy_groups(groups: dict) -> dict:
    return {g: (gs.copy() if isinstance(gs, GroupState) else gs) for g, gs in groups.items()}
