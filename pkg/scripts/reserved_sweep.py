"""P3 write size and throughput of hashkv and vlog over reserved-space fractions.

    python3 scripts/reserved_sweep.py --fractions 0.1,0.3,0.5
"""

from _common import mib, parser, run


def main():
    ap = parser(__doc__)
    ap.add_argument("--fractions", default="0.1,0.2,0.3,0.4,0.5")
    args = ap.parse_args()
    print("reserved  backend   P3 MiB  P3 ops/s")
    for f in (float(x) for x in args.fractions.split(",")):
        for b in ("hashkv", "vlog"):
            r = run(args, f"{b}-{f}", value_backend=b, reserved_fraction=f)[-1]
            print(f"{f:8.2f}  {b:7s} {mib(r.device_write_bytes)}  {r.ops_per_sec:8.0f}", flush=True)


if __name__ == "__main__":
    main()
