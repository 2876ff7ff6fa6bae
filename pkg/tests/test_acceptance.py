"""Acceptance gate: ten criteria, each at its stated tolerance.

Every test prints one ``criterion N PASS|FAIL: ...`` line and the lines are
repeated in the terminal summary.  Scale is chosen with HASHKV_ACCEPT_SCALE:

    small (default)  64 MiB stores, the whole gate in roughly half an hour
    desk             2 GiB stores; hours on one core

Stores live under HASHKV_ACCEPT_DIR (default /dev/shm).  The scan criterion
needs a real block device and uses HASHKV_ACCEPT_DISK_DIR (default /var/tmp).
"""

import os
import random
import shutil
import tempfile

import pytest

from hashkv import Store, audit, desk_preset, small_preset
from hashkv.bench import Experiment, WorkloadSpec
from hashkv.bench.driver import run_load, run_scan_bench
from hashkv.bench.workload import KeySpace

import crashkit
from conftest import tiny_config

SCALE = os.environ.get("HASHKV_ACCEPT_SCALE", "small")
PRESET = desk_preset if SCALE == "desk" else small_preset
BASE = os.environ.get("HASHKV_ACCEPT_DIR", "/dev/shm" if os.path.isdir("/dev/shm") else tempfile.gettempdir())
DISK = os.environ.get("HASHKV_ACCEPT_DISK_DIR", "/var/tmp")
SEED = 1

ACCEPTANCE_LINES: dict = {}

pytestmark = pytest.mark.acceptance


def verdict(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES[n] = line
    print("\n" + line)
    assert ok, line


def _dir(tag: str, base: str = BASE) -> str:
    return os.path.join(base, f"hashkv-accept-{SCALE}", tag)


_runs: dict = {}


def updates(backend="hashkv", reserved=0.30, **kv):
    """P0..P3 reports for one configuration; memoised across criteria."""
    key = (backend, reserved, tuple(sorted(kv.items())))
    if key not in _runs:
        small_fraction = kv.pop("small_fraction", 0.0)
        d = _dir("-".join(str(x) for x in (backend, reserved, *sorted(kv.items()))))
        cfg = PRESET(directory=d, value_backend=backend, reserved_fraction=reserved, seed=SEED, fsync=False, **kv)
        main = cfg.geometry.main_region
        if small_fraction:
            # fill the main region when every pair is separated (40 B and 1 KiB records, 8 B headers)
            spec = WorkloadSpec(keys=main // 540, small_fraction=small_fraction, seed=SEED)
        else:
            spec = WorkloadSpec(keys=main // 1024, seed=SEED)
        _runs[key] = Experiment(cfg, spec, phases=3).run()
        shutil.rmtree(d, ignore_errors=True)
    return _runs[key]


def p3(reports):
    return reports[3]


def update_tput(reports) -> float:
    ops = sum(r.ops for r in reports[1:])
    return ops / sum(r.seconds for r in reports[1:])


# --------------------------------------------------------------------------- 1
def _oracle_run(backend: str, n_ops: int, seed: int, **kv) -> list:
    d = tempfile.mkdtemp(prefix="oracle-", dir=BASE)
    cfg = tiny_config(d, value_backend=backend, cold_fraction=0.5, cold_log_chunk_bytes="4KiB",
                      vlog_chunk_bytes="4KiB", **kv)
    rng = random.Random(seed)
    keys = [b"key%05d" % i for i in range(400)]
    model: dict = {}
    bad = []
    s = Store(cfg)
    try:
        for i in range(n_ops):
            r = rng.random()
            k = rng.choice(keys)
            if r < 0.50:
                v = bytes([rng.randrange(256)]) * rng.choice([1, 40, 150, 183, 184, 400, 1000, 2500])
                s.put(k, v)
                model[k] = v
            elif r < 0.58:
                s.delete(k)
                model.pop(k, None)
            elif r < 0.88:
                if s.get(k) != model.get(k):
                    bad.append(f"op {i}: get {k!r}")
            elif r < 0.95:
                n = rng.randrange(1, 40)
                want = [(x, model[x]) for x in sorted(model) if x >= k][:n]
                if s.scan(k, n) != want:
                    bad.append(f"op {i}: scan {k!r} x{n}")
            else:
                m = rng.randrange(4)
                if m == 0:
                    s.flush()
                elif m == 1:
                    s.gc(rng.randrange(1, 4))
                elif m == 2:
                    s.compact()
                else:
                    s.close()
                    s = Store(cfg)
            if len(bad) > 20:
                break
        s.flush()
        bad += audit(s)
        everything = s.scan(b"", None)
        if everything != sorted(model.items()):
            bad.append("final full scan differs from the model")
    finally:
        s.abandon()
        shutil.rmtree(d, ignore_errors=True)
    return bad


def test_c1_oracle_equivalence():
    n = 100_000
    variants = {"hashkv": {}, "hashkv+hot": {"hotness": True}, "vlog": {}, "inline": {}}
    mismatches = {}
    for name, kv in variants.items():
        mismatches[name] = _oracle_run(name.split("+")[0], n, SEED, **kv)
    total = sum(len(m) for m in mismatches.values())
    detail = ", ".join(f"{k}: {len(v)}" for k, v in mismatches.items())
    verdict(1, total == 0, f"{n} ops per backend variant, mismatches {detail}")


# --------------------------------------------------------------------------- 2
def test_c2_gc_without_lookups():
    h = updates("hashkv")
    v = updates("vlog")
    h_ops = sum(r.gc["operations"] for r in h)
    h_look = sum(r.gc["lsm_lookups"] for r in h)
    v_ok = all(r.gc["lsm_lookups"] == r.gc["records_scanned"] for r in v)
    v_ops = sum(r.gc["operations"] for r in v)
    ok = h_ops > 0 and h_look == 0 and v_ops > 0 and v_ok
    verdict(2, ok, f"hashkv {h_ops} GCs / {h_look} lookups; vlog {v_ops} GCs, lookups == records scanned "
                   f"in every phase: {v_ok}")


# --------------------------------------------------------------------------- 3
def test_c3_write_traffic_and_throughput():
    h, v = p3(updates("hashkv")), p3(updates("vlog"))
    w = h.device_write_bytes / v.device_write_bytes
    t = h.ops_per_sec / v.ops_per_sec
    verdict(3, w <= 0.7 and t >= 1.5,
            f"P3 write size hashkv/vlog = {w:.3f} (<= 0.7), throughput hashkv/vlog = {t:.2f} (>= 1.5)")


# --------------------------------------------------------------------------- 4
def test_c4_reserved_space_monotone():
    fracs = (0.1, 0.3, 0.5)
    w = {b: [p3(updates(b, f)).device_write_bytes for f in fracs] for b in ("hashkv", "vlog")}
    mono = all(x >= y for b in w for x, y in zip(w[b], w[b][1:]))
    below = all(a < b for a, b in zip(w["hashkv"], w["vlog"]))
    mib = {b: [round(x / 2**20, 1) for x in w[b]] for b in w}
    verdict(4, mono and below, f"P3 MiB at reserved {fracs}: hashkv {mib['hashkv']}, vlog {mib['vlog']}; "
                               f"non-increasing {mono}, hashkv < vlog {below}")


# --------------------------------------------------------------------------- 5
def test_c5_gc_policy_ordering():
    w = {p: p3(updates("hashkv", 0.2, gc_policy=p)).device_write_bytes for p in ("greedy", "random", "cba")}
    vs_random = w["greedy"] / w["random"]
    vs_cba = w["greedy"] / w["cba"]
    verdict(5, vs_random <= 0.9 and abs(vs_cba - 1) <= 0.10,
            f"greedy/random = {vs_random:.3f} (<= 0.9), greedy/cba = {vs_cba:.3f} (1 +- 0.10)")


# --------------------------------------------------------------------------- 6
def test_c6_hotness_awareness():
    off = p3(updates("hashkv", 0.2, gc_policy="greedy"))
    on = p3(updates("hashkv", 0.2, gc_policy="greedy", hotness=True, cold_fraction=1.0))
    cut = 1 - on.device_write_bytes / off.device_write_bytes
    gain = on.ops_per_sec / off.ops_per_sec
    verdict(6, cut >= 0.20 and gain > 1.0,
            f"tagging cuts P3 write size by {100 * cut:.1f}% (>= 20%), throughput x{gain:.2f} (> 1)")


# --------------------------------------------------------------------------- 7
def test_c7_selective_separation():
    sweep = (0, 64, 192, 512, 4096)
    runs = {t: updates("hashkv", 0.3, selective_threshold=t, small_fraction=0.5) for t in sweep}
    total = {t: sum(r.device_write_bytes for r in runs[t]) for t in sweep}
    cut = 1 - total[192] / total[0]
    tput = {t: update_tput(runs[t]) for t in sweep}
    interior = max(tput[t] for t in sweep[1:-1]) > max(tput[sweep[0]], tput[sweep[-1]])
    shown = ", ".join(f"{t}:{tput[t]:.0f}" for t in sweep)
    verdict(7, cut >= 0.10 and interior,
            f"threshold 192 cuts total write size by {100 * cut:.1f}% (>= 10%); "
            f"update ops/s by threshold {shown}; interior maximum {interior}")


# --------------------------------------------------------------------------- 8
CRASH_VARIANTS = {
    "plain": {},
    "hotness": {"hotness": True, "cold_fraction": 0.3, "cold_log_chunk_bytes": "8KiB"},
    "vlog": {"value_backend": "vlog", "vlog_chunk_bytes": "8KiB"},
}


def test_c8_crash_consistency_and_journal_cost():
    n_ops = 3000
    points = failures = 0
    first_bad = ""
    for name, kv in CRASH_VARIANTS.items():
        d = tempfile.mkdtemp(prefix=f"crash-{name}-", dir=BASE)
        cfg = tiny_config(d, **kv)
        for p in crashkit.pick_points(crashkit.count_points(cfg, n_ops), per_label=3):
            out = crashkit.crash_at(cfg, p, n_ops)
            points += 1
            if out.problems:
                failures += 1
                first_bad = first_bad or f"{name}@{p} {out.label}: {out.problems[0]}"
        shutil.rmtree(d, ignore_errors=True)

    # measured back to back; the memoised journaling run is from much earlier in the session
    _runs.pop(("hashkv", 0.30, ()), None)
    on = p3(updates("hashkv"))
    off = p3(updates("hashkv", journaling=False))
    penalty = 1 - on.ops_per_sec / off.ops_per_sec
    extra = on.device_write_bytes / off.device_write_bytes - 1
    ok = points >= 50 and failures == 0 and penalty <= 0.15 and extra <= 0.10
    detail = (f"{points} crash points, {failures} failed{' (' + first_bad + ')' if first_bad else ''}; "
              f"journal throughput penalty {100 * penalty:.1f}% (<= 15%), write increase {100 * extra:.1f}% (<= 10%)")
    verdict(8, ok, detail)


# --------------------------------------------------------------------------- 9
def test_c9_distribution_and_utilization():
    d = _dir("distribution")
    shutil.rmtree(d, ignore_errors=True)
    keys = 1 << 18
    pair = 256
    cfg = PRESET(directory=d, n_main=8, main_size=(keys * (pair + 8)) // 8 + 4096, log_size="64KiB",
                 seed=SEED, fsync=False)
    s = Store(cfg)
    try:
        rep = run_load(s, KeySpace(WorkloadSpec(keys=keys, pair_size=pair, seed=SEED)))
    finally:
        s.close()
        shutil.rmtree(d, ignore_errors=True)
    dev = rep.group_records["max_dev_pct"]
    util = [r.utilization for r in updates("hashkv")[1:]]
    ok = dev <= 2.5 and min(util) >= 0.95
    verdict(9, ok, f"{keys} keys over 8 groups, max deviation {dev:.2f}% (<= 2.5%); "
                   f"utilization after P1-P3 {[round(u, 4) for u in util]} (>= 0.95)")


# -------------------------------------------------------------------------- 10
def _scan_store(tag, backend, pair):
    d = _dir(f"scan-{tag}", DISK)
    shutil.rmtree(d, ignore_errors=True)
    cfg = PRESET(directory=d, value_backend=backend, seed=SEED, fsync=False)
    keys = cfg.geometry.main_region // pair
    s = Store(cfg)
    space = KeySpace(WorkloadSpec(keys=keys, pair_size=pair, seed=SEED))
    run_load(s, space)
    s.flush()
    return s, space, d


def test_c10_scan():
    total = PRESET().geometry.main_region // 4
    s, space, d = _scan_store("256", "hashkv", 256)
    try:
        on = run_scan_bench(s, space, total, 1 << 20, readahead=True)
        off = run_scan_bench(s, space, total, 1 << 20, readahead=False)
    finally:
        s.close()
        shutil.rmtree(d, ignore_errors=True)
    ra = on.extra["scan_mib_per_sec"] / off.extra["scan_mib_per_sec"]

    rates = {}
    for backend in ("hashkv", "inline"):
        s, space, d = _scan_store("4k-" + backend, backend, 4096)
        try:
            rates[backend] = run_scan_bench(s, space, total, 1 << 20).extra["scan_mib_per_sec"]
        finally:
            s.close()
            shutil.rmtree(d, ignore_errors=True)
    big = rates["hashkv"] / rates["inline"]
    verdict(10, ra >= 1.2 and big >= 1.0,
            f"256 B pairs: read-ahead on/off = {ra:.2f} (>= 1.2); 4 KiB pairs: hashkv/inline scan = {big:.2f} (>= 1)")
