"""Shared bits for the experiment scripts: argument parsing and one-run helper."""

import argparse
import os
import shutil

from hashkv import desk_preset, small_preset
from hashkv.bench import Experiment, WorkloadSpec
from hashkv.bench.report import to_csv


def parser(doc: str) -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(description=doc)
    ap.add_argument("--preset", choices=("small", "desk"), default="small")
    ap.add_argument("--dir", default="/dev/shm/hashkv-exp")
    ap.add_argument("--phases", type=int, default=3)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--csv", help="append all phase reports here")
    return ap


def run(args, label: str, small_fraction: float = 0.0, **kv):
    preset = desk_preset if args.preset == "desk" else small_preset
    d = os.path.join(args.dir, label)
    cfg = preset(directory=d, seed=args.seed, fsync=False, **kv)
    main = cfg.geometry.main_region
    if small_fraction:
        spec = WorkloadSpec(keys=main // 540, small_fraction=small_fraction, seed=args.seed)
    else:
        spec = WorkloadSpec(keys=main // 1024, seed=args.seed)
    reports = Experiment(cfg, spec, args.phases).run()
    shutil.rmtree(d, ignore_errors=True)
    if args.csv:
        text = to_csv(reports, [label] * len(reports))
        fresh = not os.path.exists(args.csv)
        with open(args.csv, "a") as f:
            f.write(text if fresh else text.split("\n", 1)[1])
    return reports


def mib(n: int) -> str:
    return f"{n / 2**20:8.1f}"
