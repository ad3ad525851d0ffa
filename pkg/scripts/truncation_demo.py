"""How far the logits move once an input has more active pixels than n_max.

For each active count the sparse path is run with the given n_max and again
with n_max large enough to keep every pixel. The difference is the cost of
truncation."""

import argparse

import numpy as np

from sparsecnn.model import PRESETS, gen_random_model, run_sparse
from sparsecnn.preprocess import gen_synthetic_sparse


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--preset", choices=sorted(PRESETS), default="neutrino")
    ap.add_argument("--n-max", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--trials", type=int, default=10)
    args = ap.parse_args()

    h, w, _ = PRESETS[args.preset].input_shape
    model = gen_random_model(args.seed, args.preset, n_max=args.n_max)
    rng = np.random.default_rng(args.seed)
    print(f"{'active':>7}{'dropped':>9}{'mean |dlogit|':>15}{'argmax kept':>13}")
    for n_act in range(args.n_max - 4, 3 * args.n_max + 1, 4):
        full = model.with_n_max(max(n_act, 1))
        devs, same = [], 0
        for _ in range(args.trials):
            x = gen_synthetic_sparse(int(rng.integers(2**32)), h, w, n_act)
            a, b = run_sparse(model, x), run_sparse(full, x)
            devs.append(float(np.mean(np.abs(a - b))))
            same += int(np.argmax(a) == np.argmax(b))
        dropped = max(0, n_act - args.n_max)
        print(f"{n_act:>7}{dropped:>9}{np.mean(devs):>15.4g}{same:>10}/{args.trials}")


if __name__ == "__main__":
    main()
