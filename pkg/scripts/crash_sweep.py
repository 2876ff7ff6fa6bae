"""Crash at every labelled sync boundary of a seeded workload and check recovery.

    python3 scripts/crash_sweep.py --ops 3000 --variant hotness
"""

import argparse
import collections
import os
import shutil
import sys
import tempfile

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "tests"))

import crashkit  # noqa: E402
from conftest import tiny_config  # noqa: E402

VARIANTS = {
    "plain": {},
    "hotness": {"hotness": True, "cold_fraction": 0.3, "cold_log_chunk_bytes": "8KiB"},
    "vlog": {"value_backend": "vlog", "vlog_chunk_bytes": "8KiB"},
    "nojournal": {"journaling": False},
}


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--variant", choices=sorted(VARIANTS), default="plain")
    ap.add_argument("--ops", type=int, default=3000)
    ap.add_argument("--all", action="store_true", help="every crash point, not three per label")
    args = ap.parse_args()
    cfg = tiny_config(tempfile.mkdtemp(prefix="crash-", dir="/dev/shm"), **VARIANTS[args.variant])
    labels = crashkit.count_points(cfg, args.ops)
    points = range(1, len(labels) + 1) if args.all else crashkit.pick_points(labels)
    by_label = collections.Counter()
    bad = 0
    for p in points:
        out = crashkit.crash_at(cfg, p, args.ops)
        by_label[out.label] += 1
        if out.problems:
            bad += 1
            print(f"point {p} ({out.label}): {out.problems[:3]}")
    for lab, n in sorted(by_label.items()):
        print(f"{n:4d}  {lab}")
    print(f"{len(points)} points of {len(labels)}, {bad} failed")
    shutil.rmtree(cfg.directory, ignore_errors=True)
    return 1 if bad else 0


if __name__ == "__main__":
    sys.exit(main())
