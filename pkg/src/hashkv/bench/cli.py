"""Command-line benchmark driver.

    hashkv-bench all --backend hashkv --dir /tmp/hk --phases 3
    hashkv-bench load --backend vlog --dir /tmp/vl --pair-size 1KiB
    hashkv-bench update --dir /tmp/vl
    hashkv-bench ycsb --dir /tmp/vl --workload A --ops 100000
    hashkv-bench scan --dir /tmp/vl --scan-total 64MiB --readahead off
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
from typing import Optional, Sequence

from ..config import BACKENDS, GC_POLICIES, apply_env, desk_preset, load_config_file, parse_size, small_preset
from ..errors import StoreError
from ..store import Store
from .driver import MetricsReport, run_load, run_scan_bench, run_update_phases, run_ycsb
from .report import render
from .workload import YCSB_MIXES, KeySpace, PhaseSpec, WorkloadSpec

STATE_FILE = "bench-state.json"
EXIT_ASSERT = 2


def _onoff(v: str) -> bool:
    if v not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off")
    return v == "on"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hashkv-bench", description="Load / update / YCSB / scan benchmarks.")
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--backend", choices=BACKENDS, default=None)
    common.add_argument("--dir", required=True, help="store directory")
    common.add_argument("--preset", choices=("small", "desk"), default="small")
    common.add_argument("--config", help="key = value config file applied over the preset")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--keys", type=int, default=None, help="key population (default: fill the main region)")
    common.add_argument("--phase-bytes", type=parse_size, default=None, help="bytes of updates per phase")
    common.add_argument("--pair-size", type=parse_size, default=None)
    common.add_argument("--zipf-theta", type=float, default=None)
    common.add_argument("--reserved-frac", type=float, default=None)
    common.add_argument("--gc-policy", choices=GC_POLICIES, default=None)
    common.add_argument("--hotness", type=_onoff, default=None)
    common.add_argument("--selective-threshold", type=parse_size, default=None)
    common.add_argument("--journal", type=_onoff, default=None)
    common.add_argument("--format", choices=("table", "csv", "json"), default="table")
    common.add_argument("--out", help="write the report here instead of stdout")
    common.add_argument("--assert", dest="check", action="store_true",
                        help="exit 2 if a run violates its acceptance thresholds")

    sub.add_parser("load", parents=[common], help="fresh store, insert the key population (P0)")
    up = sub.add_parser("update", parents=[common], help="Zipfian update phases on a loaded store")
    up.add_argument("--phases", type=int, default=3)
    y = sub.add_parser("ycsb", parents=[common], help="one YCSB mix on a loaded store")
    y.add_argument("--workload", choices=sorted(YCSB_MIXES), required=True)
    y.add_argument("--ops", type=int, default=100000)
    sc = sub.add_parser("scan", parents=[common], help="range scans with Zipf-chosen start keys")
    sc.add_argument("--scan-bytes", type=parse_size, default=1 << 20, help="bytes of pairs per scan")
    sc.add_argument("--scan-total", type=parse_size, default=64 << 20)
    sc.add_argument("--readahead", type=_onoff, default=True)
    a = sub.add_parser("all", parents=[common], help="fresh store: load then update phases")
    a.add_argument("--phases", type=int, default=3)
    a.add_argument("--ycsb", default="", help="YCSB mixes to run afterwards, e.g. ACF")
    a.add_argument("--ops", type=int, default=100000)
    return p


SAVED_OPTIONS = ("value_backend", "reserved_fraction", "gc_policy", "hotness", "selective_threshold", "journaling",
                 "seed")


def store_config(args, state: Optional[dict] = None):
    preset_name = state.get("preset", args.preset) if state else args.preset
    preset = desk_preset if preset_name == "desk" else small_preset
    cfg = preset(directory=args.dir)
    if args.config:
        cfg = load_config_file(args.config, cfg)
    cfg = apply_env(cfg)
    over = dict(state.get("config", {})) if state else {}
    for flag, opt in (("backend", "value_backend"), ("seed", "seed"), ("reserved_frac", "reserved_fraction"),
                      ("gc_policy", "gc_policy"), ("hotness", "hotness"),
                      ("selective_threshold", "selective_threshold"), ("journal", "journaling")):
        v = getattr(args, flag)
        if v is not None:
            over[opt] = v
    return cfg.with_overrides(**over)


def workload_spec(args, cfg, state: Optional[dict] = None) -> WorkloadSpec:
    if state is not None:
        spec = WorkloadSpec(keys=state["keys"], key_size=state["key_size"], pair_size=state["pair_size"],
                            theta=state["theta"], seed=state["seed"])
        if args.zipf_theta is not None:
            spec.theta = args.zipf_theta
    else:
        pair = args.pair_size or 1024
        keys = args.keys or max(1, cfg.geometry.main_region // pair)
        spec = WorkloadSpec(keys=keys, pair_size=pair, seed=cfg.seed,
                            theta=args.zipf_theta if args.zipf_theta is not None else 0.99)
    if args.phase_bytes:
        spec.phases = [PhaseSpec(f"P{i}", volume_bytes=args.phase_bytes) for i in range(1, 33)]
    return spec.validate()


def _save_state(directory: str, space: KeySpace, cfg, preset: str) -> None:
    s = space.spec
    state = {"keys": space.count, "key_size": s.key_size, "pair_size": s.pair_size, "theta": s.theta,
             "seed": s.seed, "preset": preset,
             "config": {k: (getattr(cfg.geometry, k) if k == "reserved_fraction" else getattr(cfg, k))
                        for k in SAVED_OPTIONS}}
    with open(os.path.join(directory, STATE_FILE), "w") as f:
        json.dump(state, f)


def _load_state(directory: str) -> dict:
    path = os.path.join(directory, STATE_FILE)
    if not os.path.exists(path):
        raise SystemExit(f"{directory} has no {STATE_FILE}; run 'load' or 'all' first")
    with open(path) as f:
        return json.load(f)


def check(reports: Sequence[MetricsReport]) -> list[str]:
    """Per-run thresholds that a single backend can be held to."""
    bad = []
    for r in reports:
        if r.phase == "P0":
            if r.gc.get("operations", 0):
                bad.append(f"{r.backend} P0: GC ran during load")
            if r.backend == "hashkv" and not 1.0 < r.write_amplification < 3.0:
                bad.append(f"hashkv P0: write amplification {r.write_amplification:.2f} outside (1, 3)")
        if r.backend == "hashkv" and r.gc.get("lsm_lookups", 0):
            bad.append(f"hashkv {r.phase}: GC issued {r.gc['lsm_lookups']} index lookups")
        if r.backend == "vlog" and r.gc.get("lsm_lookups", 0) != r.gc.get("records_scanned", 0):
            bad.append(f"vlog {r.phase}: lookups {r.gc['lsm_lookups']} != records scanned {r.gc['records_scanned']}")
        if r.phase.startswith("P") and r.phase != "P0" and r.utilization is not None and r.utilization < 0.95:
            bad.append(f"{r.backend} {r.phase}: utilization {r.utilization:.3f} < 0.95")
        if r.phase == "YCSB-C" and r.gc.get("operations", 0):
            bad.append(f"{r.backend} YCSB-C: GC ran without writes")
    return bad


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    cmd = args.command
    state = None
    if cmd in ("load", "all"):
        shutil.rmtree(args.dir, ignore_errors=True)
        cfg = store_config(args)
        spec = workload_spec(args, cfg)
    else:
        state = _load_state(args.dir)
        cfg = store_config(args, state)
        spec = workload_spec(args, cfg, state)
    try:
        store = Store(cfg)
    except StoreError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    space = KeySpace(spec)
    reports = []
    try:
        if cmd in ("load", "all"):
            reports.append(run_load(store, space))
        else:
            space.extend(spec.keys)
        if cmd in ("update", "all"):
            reports += run_update_phases(store, space, args.phases)
        if cmd == "ycsb":
            reports.append(run_ycsb(store, space, args.workload, args.ops))
        if cmd == "all":
            for w in args.ycsb.upper():
                reports.append(run_ycsb(store, space, w, args.ops))
        if cmd == "scan":
            reports.append(run_scan_bench(store, space, args.scan_total, args.scan_bytes, args.readahead))
    except StoreError as exc:
        store.abandon()
        print(f"error: {exc}", file=sys.stderr)
        return 1
    store.close()
    _save_state(args.dir, space, cfg, state.get("preset", args.preset) if state else args.preset)

    text = render(reports, args.format)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text + "\n")
    else:
        print(text)
    if args.check:
        bad = check(reports)
        for b in bad:
            print(f"ASSERT FAILED: {b}", file=sys.stderr)
        if bad:
            return EXIT_ASSERT
    return 0


if __name__ == "__main__":
    sys.exit(main())
