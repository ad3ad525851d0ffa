"""Cost-model tables: reduction depth, estimated II and conv multiplies as
n_max and the input size grow. Cycle figures come from the calibrated linear
fit and are estimates, not measurements."""

import argparse

from sparsecnn import costmodel as cm


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n-max", type=int, nargs="+", default=[5, 10, 15, 20, 25, 30])
    ap.add_argument("--sizes", type=int, nargs="+", default=[500, 1000, 2000, 3000])
    ap.add_argument("--k", type=int, default=3)
    args = ap.parse_args()

    cal = cm.default_calibration()
    print(f"II = {cal.slope:.3g} * n_max + {cal.intercept:.3g}  ({cm.CALIBRATED_LABEL})")
    print(f"{'pixels':>7}{'depth':>7}" + "".join(f"{'n=' + str(n):>9}" for n in args.n_max))
    for size in args.sizes:
        row = "".join(f"{cm.estimate_cycles(cal, n):>9}" for n in args.n_max)
        print(f"{size:>7}{cm.tree_depth(size):>7}{row}")

    print(f"\nconv multiplies, K={args.k}, 63x63 input, c_in=c_out=2")
    print(f"{'n_max':>6}{'sparse':>9}{'dense':>9}{'ratio':>9}")
    for n in args.n_max:
        c = cm.conv_cost(n, 2, 2, 63, 63, args.k)
        print(f"{n:>6}{c.sparse_mults:>9}{c.dense_mults:>9}{float(c.ratio):>9.2%}")


if __name__ == "__main__":
    main()
