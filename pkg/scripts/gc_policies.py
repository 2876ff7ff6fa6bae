"""Greedy, CBA, GRA and random GC selection on hashkv at one reserved fraction."""

from _common import mib, parser, run


def main():
    ap = parser(__doc__)
    ap.add_argument("--reserved", type=float, default=0.2)
    ap.add_argument("--gra-d", type=int, default=5)
    args = ap.parse_args()
    res = {}
    for p in ("greedy", "cba", "gra", "random"):
        r = run(args, p, reserved_fraction=args.reserved, gc_policy=p, gra_d=args.gra_d)[-1]
        res[p] = r
        print(f"{p:7s} P3 {mib(r.device_write_bytes)} MiB  {r.ops_per_sec:7.0f} ops/s  "
              f"{r.gc['operations']} GCs", flush=True)
    g = res["greedy"].device_write_bytes
    print(f"greedy/random = {g / res['random'].device_write_bytes:.3f}, greedy/cba = {g / res['cba'].device_write_bytes:.3f}")


if __name__ == "__main__":
    main()
