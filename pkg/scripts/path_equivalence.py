"""Run every preset through the sparse and dense-constrained paths on random
inputs and report the worst logit deviation and the conv multiply ratio."""

import argparse

import numpy as np

from sparsecnn import OpCounter
from sparsecnn.model import PRESETS, gen_random_model, run_dense, run_dense_constrained, run_sparse
from sparsecnn.numerics import FixedFormat
from sparsecnn.preprocess import gen_synthetic_sparse


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--inputs", type=int, default=20)
    ap.add_argument("--n-max", type=int, default=20)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    print(f"{'preset':<10}{'mode':<7}{'max |dev|':>12}{'sparse mults':>14}{'dense mults':>13}")
    for name in sorted(PRESETS):
        h, w, _ = PRESETS[name].input_shape
        for mode in ("float", "fixed"):
            m = gen_random_model(args.seed, name, n_max=args.n_max, mode=mode, fmt=FixedFormat(16, 6))
            worst, sparse_ops, dense_ops = 0.0, OpCounter(), OpCounter()
            for _ in range(args.inputs):
                n_act = int(rng.integers(0, 2 * args.n_max + 1))
                x = gen_synthetic_sparse(int(rng.integers(2**32)), h, w, n_act)
                a = run_sparse(m, x, counter=sparse_ops)
                b = run_dense_constrained(m, x)
                run_dense(m, x, counter=dense_ops)
                worst = max(worst, float(np.max(np.abs(a - b))))
            print(f"{name:<10}{mode:<7}{worst:>12.3g}{sparse_ops.mults:>14}{dense_ops.mults:>13}")


if __name__ == "__main__":
    main()
