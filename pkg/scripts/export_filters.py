"""Build the steerable wavelet bank for a given image size and export its frequency responses.

    python3 scripts/export_filters.py filters --size 32 32 --L 8
"""
import argparse

from sepconc.wavelets import build_steerable_bank, export_bank, tightness_residual


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out")
    ap.add_argument("--size", type=int, nargs=2, default=(32, 32))
    ap.add_argument("--L", type=int, default=8)
    args = ap.parse_args()
    bank = build_steerable_bank(tuple(args.size), args.L)
    paths = export_bank(bank, args.out)
    print(f"wrote {len(paths)} arrays to {args.out}; tightness residual {tightness_residual(bank):.2e}")


if __name__ == "__main__":
    main()
