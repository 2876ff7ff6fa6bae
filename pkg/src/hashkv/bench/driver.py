"""Experiment driver: load, update phases, YCSB mixes and scans, each measured as one report."""

from __future__ import annotations

import shutil
import time
from array import array
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional

import numpy as np

from ..config import MiB, StoreConfig
from ..metrics import BREAKDOWN
from ..store import Store
from .workload import YCSB_MIXES, KeySpace, Op, PhaseSpec, WorkloadSpec, Zipfian, load_ops, phase_ops

GC_FIELDS = ("operations", "lsm_lookups", "records_scanned", "bytes_scanned", "bytes_rewritten", "index_updates")


@dataclass
class MetricsReport:
    backend: str
    phase: str
    ops: int = 0
    seconds: float = 0.0
    ops_per_sec: float = 0.0
    user_bytes: int = 0
    device_write_bytes: int = 0
    writes_by_category: dict = field(default_factory=dict)
    write_amplification: float = 0.0
    value_store_bytes: int = 0
    lsm_bytes: int = 0
    utilization: Optional[float] = None
    latency_us: dict = field(default_factory=dict)
    breakdown_s: dict = field(default_factory=dict)
    gc: dict = field(default_factory=dict)
    cold_gc: dict = field(default_factory=dict)
    first_gc_op: int = -1
    group_records: dict = field(default_factory=dict)
    reads: int = 0
    read_misses: int = 0
    scanned_pairs: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def store_bytes(self) -> int:
        return self.value_store_bytes + self.lsm_bytes

    def breakdown_pct(self) -> dict:
        total = sum(self.breakdown_s.get(k, 0.0) for k in BREAKDOWN)
        if total <= 0:
            return dict.fromkeys(BREAKDOWN, 0.0)
        return {k: 100.0 * self.breakdown_s.get(k, 0.0) / total for k in BREAKDOWN}

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**d)


def _gc_counters(store: Store) -> tuple[dict, dict]:
    main = {k: getattr(store.gc_stats, k) + getattr(store.vlog_gc_stats, k) for k in GC_FIELDS}
    cold = {k: getattr(store.cold_gc_stats, k) for k in GC_FIELDS}
    return main, cold


def _gc_ops(store: Store) -> int:
    return store.gc_stats.operations + store.vlog_gc_stats.operations + store.cold_gc_stats.operations


def _sizes(store: Store) -> tuple[int, int]:
    lsm = sum(t.size for t in store.lsm.all_tables())
    if store.seg is not None:
        value = store.seg.stored_bytes() + (store.seg.cold.used if store.seg.cold is not None else 0)
    elif store.vlog is not None:
        value = store.vlog.log.used
    else:
        value = 0
    return value, lsm


def group_distribution(store: Store) -> dict:
    if store.seg is None:
        return {}
    counts = np.array([gs.records for gs in store.seg.groups], dtype=np.float64)
    mean = float(counts.mean())
    dev = float(np.max(np.abs(counts - mean)) / mean * 100.0) if mean else 0.0
    return {"groups": len(counts), "mean": mean, "min": int(counts.min()), "max": int(counts.max()),
            "max_dev_pct": dev}


def execute(store: Store, label: str, ops: Iterable[Op], flush_at_end: bool = True) -> MetricsReport:
    """Run an op stream against ``store`` and measure it as one phase."""
    io0 = dict(store.io.written)
    timers0 = store.timers.snapshot()
    gc0, cold0 = _gc_counters(store)
    gc_ops0 = _gc_ops(store)
    lat = array("d")
    rep = MetricsReport(store.backend, label)
    user = 0
    reads = misses = scanned = 0
    first_gc = -1
    clock = time.perf_counter
    put, get, scan = store.put, store.get, store.scan
    start = clock()
    n = 0
    for op in ops:
        t0 = clock()
        kind = op.kind
        if kind == "insert" or kind == "update":
            put(op.key, op.value)
            user += len(op.key) + len(op.value)
        elif kind == "read":
            reads += 1
            if get(op.key) is None:
                misses += 1
        elif kind == "rmw":
            reads += 1
            if get(op.key) is None:
                misses += 1
            put(op.key, op.value)
            user += len(op.key) + len(op.value)
        elif kind == "scan":
            scanned += len(scan(op.key, op.count))
        elif kind == "delete":
            store.delete(op.key)
            user += len(op.key)
        lat.append(clock() - t0)
        if first_gc < 0 and _gc_ops(store) != gc_ops0:
            first_gc = n
        n += 1
    if flush_at_end:
        store.flush()
    seconds = clock() - start

    written = {k: v - io0.get(k, 0) for k, v in store.io.written.items()}
    timers = store.timers.snapshot()
    gc1, cold1 = _gc_counters(store)
    rep.ops = n
    rep.seconds = seconds
    rep.ops_per_sec = n / seconds if seconds > 0 else 0.0
    rep.user_bytes = user
    rep.writes_by_category = written
    rep.device_write_bytes = sum(written.values())
    rep.write_amplification = rep.device_write_bytes / user if user else 0.0
    rep.value_store_bytes, rep.lsm_bytes = _sizes(store)
    if store.seg is not None:
        rep.utilization = store.seg.utilization()
    if len(lat):
        a = np.frombuffer(lat, dtype=np.float64) * 1e6
        p50, p95, p99 = np.percentile(a, [50, 95, 99])
        rep.latency_us = {"p50": float(p50), "p95": float(p95), "p99": float(p99), "mean": float(a.mean())}
    rep.breakdown_s = {k: timers[k] - timers0[k] for k in BREAKDOWN}
    rep.gc = {k: gc1[k] - gc0[k] for k in GC_FIELDS}
    rep.cold_gc = {k: cold1[k] - cold0[k] for k in GC_FIELDS}
    rep.first_gc_op = first_gc
    rep.group_records = group_distribution(store)
    rep.reads, rep.read_misses, rep.scanned_pairs = reads, misses, scanned
    return rep


# ------------------------------------------------------------------ phases
def run_load(store: Store, space: KeySpace) -> MetricsReport:
    """P0: insert the whole key population in hashed order."""
    return execute(store, "P0", load_ops(space))


def update_phase(spec: WorkloadSpec, index: int) -> PhaseSpec:
    if index - 1 < len(spec.phases):
        return spec.phases[index - 1]
    return PhaseSpec(f"P{index}", {"update": 1.0}, "zipfian", volume_bytes=spec.load_bytes())


def run_update_phases(store: Store, space: KeySpace, phases: int = 3) -> list[MetricsReport]:
    """P1..Pn: Zipfian updates over the loaded keys, each phase one load volume by default."""
    out = []
    for i in range(1, phases + 1):
        ph = update_phase(space.spec, i)
        out.append(execute(store, ph.name, phase_ops(space, ph, seed=space.spec.seed * 1000 + i)))
    return out


def run_ycsb(store: Store, space: KeySpace, workload: str, ops: int) -> MetricsReport:
    workload = workload.upper()
    if workload not in YCSB_MIXES:
        raise ValueError(f"unknown YCSB workload {workload!r}; choose from {sorted(YCSB_MIXES)}")
    dist = "latest" if workload == "D" else "zipfian"
    ph = PhaseSpec(f"YCSB-{workload}", dict(YCSB_MIXES[workload]), dist, ops=ops)
    return execute(store, ph.name, phase_ops(space, ph, seed=space.spec.seed * 7919 + ord(workload)))


def run_scan_bench(store: Store, space: KeySpace, total_scan_bytes: int, scan_bytes: int = 1 * MiB,
                   readahead: bool = True, drop_cache: bool = True) -> MetricsReport:
    """Zipf-chosen start keys, each scan covering ``scan_bytes`` of pairs.

    The page cache of the value files and tables is dropped before every scan
    so each one reads from the device.
    """
    store.flush()
    order = sorted(space.key(i) for i in range(space.count))
    per_scan = max(1, scan_bytes // space.spec.mean_pair_size())
    n_scans = max(1, total_scan_bytes // scan_bytes)
    zipf = Zipfian(len(order), space.spec.theta, seed=space.spec.seed + 99, method=space.spec.zipf_method)
    starts = [order[int(r)] for r in zipf.draw(n_scans)]
    lat = array("d")
    scanned = 0
    nbytes = 0
    busy = 0.0
    for key in starts:
        if drop_cache:
            store.drop_page_cache()
        t0 = time.perf_counter()
        items = store.scan(key, per_scan, readahead=readahead)
        dt = time.perf_counter() - t0
        busy += dt
        lat.append(dt)
        scanned += len(items)
        nbytes += sum(len(k) + len(v) for k, v in items)
    rep = MetricsReport(store.backend, f"SCAN-{'ra' if readahead else 'nora'}")
    rep.ops = n_scans
    rep.seconds = busy
    rep.ops_per_sec = n_scans / busy if busy else 0.0
    rep.scanned_pairs = scanned
    a = np.frombuffer(lat, dtype=np.float64) * 1e6
    rep.latency_us = {"p50": float(np.percentile(a, 50)), "p95": float(np.percentile(a, 95)),
                      "p99": float(np.percentile(a, 99)), "mean": float(a.mean())}
    rep.value_store_bytes, rep.lsm_bytes = _sizes(store)
    rep.extra = {"scan_mib_per_sec": nbytes / MiB / busy if busy else 0.0, "pairs_per_scan": per_scan,
                 "readahead": readahead}
    return rep


# ------------------------------------------------------------------ whole experiments
@dataclass
class Experiment:
    """One backend configuration driven through load and update phases."""

    config: StoreConfig
    workload: WorkloadSpec
    phases: int = 3
    fresh: bool = True

    def run(self, keep_open: bool = False):
        if self.fresh:
            shutil.rmtree(self.config.directory, ignore_errors=True)
        store = Store(self.config)
        space = KeySpace(self.workload.validate())
        try:
            reports = [run_load(store, space)]
            reports += run_update_phases(store, space, self.phases)
        except BaseException:
            store.abandon()
            raise
        if keep_open:
            return reports, store, space
        store.close()
        return reports


def run_experiment(config: StoreConfig, workload: WorkloadSpec, phases: int = 3) -> list[MetricsReport]:
    return Experiment(config, workload, phases).run()
