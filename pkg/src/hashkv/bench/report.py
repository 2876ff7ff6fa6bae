"""Render MetricsReports as a text table, CSV or JSON."""

from __future__ import annotations

import csv
import io
import json
from typing import Sequence

from ..metrics import BREAKDOWN
from .driver import MetricsReport

# Stable CSV contract: one row per (backend, phase); append new columns at the end only.
CSV_COLUMNS = [
    "backend", "phase", "ops", "seconds", "ops_per_sec", "user_bytes", "device_write_bytes",
    "write_amplification", "value_store_bytes", "lsm_bytes", "utilization",
    "lat_p50_us", "lat_p95_us", "lat_p99_us",
    "gc_operations", "gc_lsm_lookups", "gc_records_scanned", "gc_bytes_scanned", "gc_bytes_rewritten",
    "cold_gc_operations", "cold_gc_lsm_lookups", "first_gc_op",
    "wr_value", "wr_lsm", "wr_wal", "wr_journal", "wr_checkpoint",
] + [f"pct_{k}" for k in BREAKDOWN] + ["group_max_dev_pct", "label"]


def row(r: MetricsReport, label: str = "") -> dict:
    pct = r.breakdown_pct()
    out = {
        "backend": r.backend, "phase": r.phase, "ops": r.ops, "seconds": round(r.seconds, 4),
        "ops_per_sec": round(r.ops_per_sec, 1), "user_bytes": r.user_bytes,
        "device_write_bytes": r.device_write_bytes, "write_amplification": round(r.write_amplification, 4),
        "value_store_bytes": r.value_store_bytes, "lsm_bytes": r.lsm_bytes,
        "utilization": "" if r.utilization is None else round(r.utilization, 4),
        "lat_p50_us": round(r.latency_us.get("p50", 0.0), 2),
        "lat_p95_us": round(r.latency_us.get("p95", 0.0), 2),
        "lat_p99_us": round(r.latency_us.get("p99", 0.0), 2),
        "gc_operations": r.gc.get("operations", 0), "gc_lsm_lookups": r.gc.get("lsm_lookups", 0),
        "gc_records_scanned": r.gc.get("records_scanned", 0), "gc_bytes_scanned": r.gc.get("bytes_scanned", 0),
        "gc_bytes_rewritten": r.gc.get("bytes_rewritten", 0),
        "cold_gc_operations": r.cold_gc.get("operations", 0), "cold_gc_lsm_lookups": r.cold_gc.get("lsm_lookups", 0),
        "first_gc_op": r.first_gc_op,
        "group_max_dev_pct": round(r.group_records.get("max_dev_pct", 0.0), 3) if r.group_records else "",
        "label": label,
    }
    for cat in ("value", "lsm", "wal", "journal", "checkpoint"):
        out[f"wr_{cat}"] = r.writes_by_category.get(cat, 0)
    for k in BREAKDOWN:
        out[f"pct_{k}"] = round(pct[k], 2)
    return out


def to_csv(reports: Sequence[MetricsReport], labels: Sequence[str] = ()) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for i, r in enumerate(reports):
        w.writerow(row(r, labels[i] if i < len(labels) else ""))
    return buf.getvalue()


def to_json(reports: Sequence[MetricsReport]) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True)


def from_json(text: str) -> list[MetricsReport]:
    return [MetricsReport.from_dict(d) for d in json.loads(text)]


def _mib(n: int) -> str:
    return f"{n / (1 << 20):.1f}"


def to_table(reports: Sequence[MetricsReport]) -> str:
    head = ["backend", "phase", "ops", "ops/s", "write MiB", "WA", "p99 us", "GC ops", "GC lookups", "util"]
    rows = []
    for r in reports:
        rows.append([r.backend, r.phase, str(r.ops), f"{r.ops_per_sec:.0f}", _mib(r.device_write_bytes),
                     f"{r.write_amplification:.2f}", f"{r.latency_us.get('p99', 0.0):.0f}",
                     str(r.gc.get("operations", 0)), str(r.gc.get("lsm_lookups", 0)),
                     "-" if r.utilization is None else f"{100 * r.utilization:.1f}%"])
    widths = [max(len(h), *(len(x[i]) for x in rows)) if rows else len(h) for i, h in enumerate(head)]
    lines = ["  ".join(h.rjust(w) for h, w in zip(head, widths))]
    lines += ["  ".join(c.rjust(w) for c, w in zip(x, widths)) for x in rows]

    lines.append("")
    lines.append("time breakdown (% of flush + GC time)")
    bh = ["backend", "phase"] + list(BREAKDOWN)
    brows = []
    for r in reports:
        pct = r.breakdown_pct()
        brows.append([r.backend, r.phase] + [f"{pct[k]:.1f}" for k in BREAKDOWN])
    bw = [max(len(h), *(len(x[i]) for x in brows)) if brows else len(h) for i, h in enumerate(bh)]
    lines.append("  ".join(h.rjust(w) for h, w in zip(bh, bw)))
    lines += ["  ".join(c.rjust(w) for c, w in zip(x, bw)) for x in brows]
    return "\n".join(lines)


def render(reports: Sequence[MetricsReport], fmt: str = "table") -> str:
    if fmt == "table":
        return to_table(reports)
    if fmt == "csv":
        return to_csv(reports)
    if fmt == "json":
        return to_json(reports)
    raise ValueError(f"unknown format {fmt!r}")
