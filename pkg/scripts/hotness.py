"""Hotness awareness (tagging plus cold data log) on and off."""

from _common import mib, parser, run


def main():
    ap = parser(__doc__)
    ap.add_argument("--reserved", type=float, default=0.2)
    ap.add_argument("--theta", type=float, default=0.99)
    ap.add_argument("--cold-fraction", type=float, default=1.0, help="cold log size relative to the main region")
    args = ap.parse_args()
    off = run(args, "off", reserved_fraction=args.reserved)
    on = run(args, "on", reserved_fraction=args.reserved, hotness=True, cold_fraction=args.cold_fraction)
    for name, rs in (("off", off), ("on", on)):
        print(name, " ".join(f"{r.phase}:{mib(r.device_write_bytes).strip()}MiB/{r.ops_per_sec:.0f}ops/s" for r in rs))
    a, b = off[-1], on[-1]
    print(f"P3 write size cut {100 * (1 - b.device_write_bytes / a.device_write_bytes):.1f}%, "
          f"throughput x{b.ops_per_sec / a.ops_per_sec:.2f}")


if __name__ == "__main__":
    main()
