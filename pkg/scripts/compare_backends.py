"""Load + Zipf update phases on hashkv and vlog with one workload and seed; prints the P3 ratios.

    python3 scripts/compare_backends.py --preset desk --dir /var/tmp/hk --out desk.json
"""

import argparse
import json
import os
import time

from hashkv import desk_preset, small_preset
from hashkv.bench import Experiment, WorkloadSpec
from hashkv.bench.report import render, to_json


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--preset", choices=("small", "desk"), default="small")
    ap.add_argument("--dir", default="/dev/shm/hashkv-compare")
    ap.add_argument("--phases", type=int, default=3)
    ap.add_argument("--reserved", type=float, default=0.30)
    ap.add_argument("--theta", type=float, default=0.99)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--backends", default="hashkv,vlog")
    ap.add_argument("--set", action="append", default=[], metavar="OPT=VALUE",
                    help="extra config override, repeatable")
    ap.add_argument("--out")
    args = ap.parse_args()

    preset = desk_preset if args.preset == "desk" else small_preset
    extra = dict(s.split("=", 1) for s in args.set)
    reports = []
    last = {}
    for b in args.backends.split(","):
        cfg = preset(directory=os.path.join(args.dir, b), value_backend=b, reserved_fraction=args.reserved,
                     seed=args.seed, **extra)
        spec = WorkloadSpec(keys=cfg.geometry.main_region // 1024, theta=args.theta, seed=args.seed)
        t0 = time.time()
        rs = Experiment(cfg, spec, args.phases).run()
        print(f"{b}: {time.time() - t0:.0f}s", flush=True)
        reports += rs
        last[b] = rs[-1]
    print(render(reports))
    if "hashkv" in last and "vlog" in last:
        h, v = last["hashkv"], last["vlog"]
        print(f"P{args.phases} write size hashkv/vlog = {h.device_write_bytes / v.device_write_bytes:.3f}, "
              f"throughput hashkv/vlog = {h.ops_per_sec / v.ops_per_sec:.2f}")
    if args.out:
        with open(args.out, "w") as f:
            f.write(to_json(reports))


if __name__ == "__main__":
    main()
