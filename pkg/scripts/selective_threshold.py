"""Selective KV separation: 40 B / 1 KiB mixed pairs over a threshold sweep."""

from _common import mib, parser, run


def main():
    ap = parser(__doc__)
    ap.add_argument("--thresholds", default="0,64,192,512,4096")
    ap.add_argument("--small-fraction", type=float, default=0.5)
    args = ap.parse_args()
    print("threshold  total MiB  update ops/s  P0 ops/s")
    for t in (int(x) for x in args.thresholds.split(",")):
        rs = run(args, f"t{t}", small_fraction=args.small_fraction, selective_threshold=t)
        total = sum(r.device_write_bytes for r in rs)
        upd = sum(r.ops for r in rs[1:]) / sum(r.seconds for r in rs[1:])
        print(f"{t:9d}  {mib(total)}  {upd:12.0f}  {rs[0].ops_per_sec:8.0f}", flush=True)


if __name__ == "__main__":
    main()
