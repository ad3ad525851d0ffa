"""Command-line entry point: ``sparsecnn <subcommand> ...``.

Tables go to stdout, warnings and errors to stderr, machine-readable reports
only to the path given with ``--out``. Exit status is 0 on success, 1 when an
equivalence check fails and 2 for bad input (unreadable files, bad flags).
"""
from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import costmodel as cm
from .counters import OpCounter
from .dense_ref import naive_active_scan
from .errors import SparseCNNError
from .io import read_manifest, read_tensor, write_bundle, write_manifest, write_tensor
from .model import (
    N_MAX_PRESETS,
    PRESETS,
    SparseConv,
    gen_random_model,
    run_dense,
    run_dense_constrained,
    run_sparse,
)
from .numerics import FixedFormat, quantize_tensor
from .preprocess import apply_transforms, gen_synthetic_sparse, load_spec, parse_spec
from .sparse_core import ReduceConfig, sparse_conv, sparse_input_reduce

FLOAT_TOL = 1e-9


class UsageError(Exception):
    pass


def _pct(f: Fraction) -> str:
    return f"{float(f) * 100:.3f}%"


def _frac(f: Fraction) -> str:
    return f"{f.numerator}/{f.denominator}"


def _write_report(path, report: dict) -> None:
    Path(path).write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("values must be positive integers")
    return vals


def _fixed_format(text: str) -> FixedFormat:
    try:
        return FixedFormat.parse(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _load_model(args):
    m = read_manifest(args.model)
    if getattr(args, "format", None) is not None:
        m = m.with_mode("fixed", args.format)
    return m


# -- subcommands -----------------------------------------------------------


def cmd_preprocess(args) -> int:
    if args.spec is not None and args.spec_file is not None:
        raise UsageError("give either --spec or --spec-file, not both")
    steps = load_spec(args.spec_file) if args.spec_file else parse_spec(args.spec or "")
    write_tensor(args.output, apply_transforms(read_tensor(args.input), steps))
    return 0


def cmd_reduce(args) -> int:
    x = read_tensor(args.input)
    cfg = ReduceConfig(args.threshold, args.n_max)
    bundle = sparse_input_reduce(x, cfg)
    n_active = int((x.array[:, :, 0] > args.threshold).sum())
    if n_active > args.n_max:
        print(
            f"warning: {n_active} active pixels, kept the first {args.n_max} in row-major order "
            f"({n_active - args.n_max} dropped)",
            file=sys.stderr,
        )
    write_bundle(args.output, bundle)
    print(f"retained {bundle.n_active} of {n_active} active pixels (n_max={args.n_max})")
    return 0


_RUNNERS = {"sparse": run_sparse, "dense-constrained": run_dense_constrained, "dense": run_dense}


def cmd_infer(args) -> int:
    m = _load_model(args)
    logits = _RUNNERS[args.mode](m, read_tensor(args.tensor))
    print(f"mode {args.mode} arithmetic {m.mode}" + (f" format {m.fmt}" if m.fixed else ""))
    print("logits " + " ".join(f"{v:.9f}" for v in logits))
    print(f"class {int(np.argmax(logits))}")
    return 0


def _compare_one(m, x) -> dict:
    trace: list = []
    sparse = run_sparse(m, x, trace=trace)
    dense = run_dense_constrained(m, x)
    # replay the conv layers alone so head and pool work stay out of the tally
    sc = OpCounter()
    for i, layer in enumerate(m.layers):
        if isinstance(layer, SparseConv):
            sparse_conv(trace[i - 1], layer.kernel, m.layer_fmt(layer), sc)
    first = m.layers[0]
    fx = quantize_tensor(x, m.layer_fmt(first)) if m.fixed else x
    bundle = sparse_input_reduce(fx, ReduceConfig(first.threshold, first.n_max))
    coords, _ = naive_active_scan(fx, first.threshold, first.n_max)
    dev = float(np.max(np.abs(sparse - dense))) if sparse.size else 0.0
    tol = 0.0 if m.fixed else FLOAT_TOL
    return {
        "max_deviation": dev,
        "logits_ok": dev <= tol,
        "active_set_ok": bundle.coords() == coords,
        "n_active": len(coords),
        "sparse_conv_mults": sc.mults,
        "dense_conv_mults": _dense_conv_mults(m),
    }


def _dense_conv_mults(m) -> int:
    total = 0
    for layer, shape_before in zip(m.layers[1:], m.shapes()[:-1]):
        if isinstance(layer, SparseConv):
            kw = layer.kernel
            total += cm.conv_cost(1, kw.c_in, kw.c_out, shape_before[0], shape_before[1], kw.k).dense_mults
    return total


def _expected_sparse_mults(m) -> int:
    return sum(
        cm.conv_cost(m.n_max, l.kernel.c_in, l.kernel.c_out, 1, 1, l.kernel.k).sparse_mults
        for l in m.layers
        if isinstance(l, SparseConv)
    )


def cmd_compare(args) -> int:
    m = _load_model(args)
    inputs = []
    for path in args.tensors:
        inputs.append((str(path), read_tensor(path)))
    if args.random:
        if args.seed is None:
            raise UsageError("--random needs an explicit --seed")
        h, w, c = m.input_shape
        rng = np.random.default_rng(args.seed)
        for i in range(args.random):
            n_act = int(rng.integers(0, min(h * w, 2 * m.n_max) + 1))
            x = gen_synthetic_sparse(int(rng.integers(2**31)), h, w, n_act, channels=c)
            inputs.append((f"random[{i}]", x))
    if not inputs:
        raise UsageError("nothing to compare: give tensor files or --random N")

    expected_sparse = _expected_sparse_mults(m)
    rows = []
    failures = 0
    for name, x in inputs:
        r = _compare_one(m, x)
        r["name"] = name
        r["mult_count_ok"] = r["sparse_conv_mults"] == expected_sparse
        ok = r["logits_ok"] and r["active_set_ok"] and r["mult_count_ok"]
        failures += not ok
        rows.append(r)
        print(
            f"{'PASS' if ok else 'FAIL'} {name}: max_dev={r['max_deviation']:.3e} "
            f"active={r['n_active']} active_set={'ok' if r['active_set_ok'] else 'MISMATCH'} "
            f"mults sparse={r['sparse_conv_mults']} dense={r['dense_conv_mults']}"
        )
    ratio = Fraction(expected_sparse, max(rows[0]["dense_conv_mults"], 1))
    print(f"{len(rows) - failures}/{len(rows)} passed; conv multiply ratio {_frac(ratio)} ({_pct(ratio)})")
    if args.out:
        _write_report(
            args.out,
            {
                "model": str(args.model),
                "arithmetic": m.mode,
                "instances": rows,
                "failures": failures,
                "conv_mult_ratio": [ratio.numerator, ratio.denominator],
            },
        )
    return 1 if failures else 0


def cmd_cost(args) -> int:
    cal = cm.default_calibration()
    report: dict = {"cycle_estimates": cm.CALIBRATED_LABEL}
    if args.model:
        m = read_manifest(args.model)
        rep = cm.model_cost(m, cal)
        print(f"{'layer':<20}{'mults':>10}{'adds':>10}{'compares':>12}{'dense mults':>14}{'depth':>7}{'cycles*':>9}")
        for lc in rep.layers:
            depth = "" if lc.tree_depth is None else lc.tree_depth
            cyc = "" if lc.estimated_cycles is None else lc.estimated_cycles
            print(f"{lc.name:<20}{lc.mult_count:>10}{lc.add_count:>10}{lc.compare_count:>12}"
                  f"{lc.dense_mult_count:>14}{depth:>7}{cyc:>9}")
        t = rep.totals
        print(f"{'total':<20}{t['mult_count']:>10}{t['add_count']:>10}{t['compare_count']:>12}{t['dense_mult_count']:>14}")
        report["model"] = rep.to_dict()
        h, w, _ = m.input_shape
        n_max = m.n_max
        first = next(l for l in m.layers if isinstance(l, SparseConv)).kernel
        c_in, c_out, k = first.c_in, first.c_out, first.k
    else:
        h, w, n_max, c_in, c_out, k = args.height, args.width, args.n_max, args.c_in, args.c_out, args.k
    conv = cm.conv_cost(n_max, c_in, c_out, h, w, k)
    act_ratio = cm.act_cost(n_max, c_out, h, w)
    frac = cm.active_fraction(n_max, h, w)
    depth = cm.tree_depth(h, w)
    ii = cm.estimate_cycles(cal, n_max)
    print(f"input {h}x{w} = {h * w} pixels, n_max {n_max}")
    print(f"active_fraction = {_frac(frac)} ({_pct(frac)})")
    print(f"conv K={k} c_in={c_in} c_out={c_out}: sparse mults {conv.sparse_mults}, dense mults {conv.dense_mults}")
    print(f"mac_ratio = {_frac(conv.ratio)} ({_pct(conv.ratio)})")
    print(f"act_ratio = {_frac(act_ratio)} ({_pct(act_ratio)})")
    print(f"reduction tree depth = {depth}")
    print(f"estimated II = {ii} cycles ({cm.CALIBRATED_LABEL})")
    report.update(
        input=[h, w],
        n_max=n_max,
        active_fraction=[frac.numerator, frac.denominator],
        conv={"k": k, "c_in": c_in, "c_out": c_out, "sparse_mults": conv.sparse_mults,
              "dense_mults": conv.dense_mults, "ratio": [conv.ratio.numerator, conv.ratio.denominator]},
        act_ratio=[act_ratio.numerator, act_ratio.denominator],
        tree_depth=depth,
        estimated_ii=ii,
    )
    if args.out:
        _write_report(args.out, report)
    return 0


def cmd_sweep(args) -> int:
    cal = cm.default_calibration()
    report: dict = {"cycle_estimates": cm.CALIBRATED_LABEL, "calibration": {
        "slope": cal.slope, "intercept": cal.intercept, "residuals": list(cal.residuals)}}

    print("input reduction (II estimates are " + cm.CALIBRATED_LABEL + ")")
    print(f"{'size':>6}{'depth':>7}" + "".join(f"{'n=' + str(n):>8}" for n in args.n_max_list))
    red = []
    for size in args.sizes:
        d = cm.tree_depth(size)
        est = [cm.estimate_cycles(cal, n) for n in args.n_max_list]
        print(f"{size:>6}{d:>7}" + "".join(f"{e:>8}" for e in est))
        red.append({"size": size, "tree_depth": d, "estimated_ii": est})
    report["reduction"] = red

    print("\nsparse conv multiplies (independent of K)")
    print(f"{'c_in':>5}{'c_out':>6}{'K':>3}" + "".join(f"{'n=' + str(n):>8}" for n in args.n_max_list))
    conv = []
    for c_in, c_out in args.channels:
        for k in args.kernels:
            mults = [cm.conv_cost(n, c_in, c_out, 1, 1, k).sparse_mults for n in args.n_max_list]
            print(f"{c_in:>5}{c_out:>6}{k:>3}" + "".join(f"{v:>8}" for v in mults))
            conv.append({"c_in": c_in, "c_out": c_out, "k": k, "sparse_mults": mults})
    report["conv"] = conv

    print("\npreset variants")
    print(f"{'dataset':<10}{'variant':<8}{'n_max':>6}{'pixels':>8}{'active':>10}{'depth':>7}{'II*':>6}")
    variants = []
    for name, p in PRESETS.items():
        h, w, _ = p.input_shape
        for label, n in N_MAX_PRESETS.items():
            frac = cm.active_fraction(n, h, w)
            row = {"dataset": name, "variant": label, "n_max": n, "pixels": h * w,
                   "active_fraction": [frac.numerator, frac.denominator],
                   "tree_depth": cm.tree_depth(h, w), "estimated_ii": cm.estimate_cycles(cal, n)}
            print(f"{name:<10}{label:<8}{n:>6}{h * w:>8}{_pct(frac):>10}{row['tree_depth']:>7}{row['estimated_ii']:>6}")
            variants.append(row)
    report["presets"] = variants
    if args.out:
        _write_report(args.out, report)
    return 0


def cmd_gen_weights(args) -> int:
    if args.seed is None:
        raise UsageError("gen-weights needs an explicit --seed")
    n_max = N_MAX_PRESETS.get(args.n_max, None) if not args.n_max.isdigit() else int(args.n_max)
    if n_max is None:
        raise UsageError(f"--n-max must be an integer or one of {sorted(N_MAX_PRESETS)}")
    kwargs = {}
    if args.format is not None:
        kwargs.update(mode="fixed", fmt=args.format)
    m = gen_random_model(
        args.seed,
        args.preset,
        channels=tuple(args.channels),
        hidden=args.hidden,
        n_max=n_max,
        kernel=args.k,
        threshold=args.threshold,
        **kwargs,
    )
    write_manifest(args.output, m)
    print(f"wrote {args.preset} model with {m.n_params()} parameters to {args.output}")
    return 0


# -- parser ----------------------------------------------------------------


def _channel_pairs(text: str) -> list[tuple[int, int]]:
    try:
        pairs = [tuple(int(v) for v in p.split(":")) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected pairs like 1:1,2:2, got {text!r}") from None
    if not pairs or any(len(p) != 2 or min(p) < 1 for p in pairs):
        raise argparse.ArgumentTypeError(f"expected pairs like 1:1,2:2, got {text!r}")
    return pairs


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sparsecnn", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="apply sparsification transforms to a tensor file")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--spec", help="comma-separated steps, e.g. avg_pool:3,pad_to:48x48,threshold:0.4")
    p.add_argument("--spec-file", help="text file with one step per line")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("reduce", help="extract active pixels into a bundle file")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--threshold", type=float, default=0.0)
    p.add_argument("--n-max", type=int, required=True)
    p.set_defaults(func=cmd_reduce)

    p = sub.add_parser("infer", help="run a model on one tensor and print logits")
    p.add_argument("model")
    p.add_argument("tensor")
    p.add_argument("--mode", choices=sorted(_RUNNERS), default="sparse")
    p.add_argument("--format", type=_fixed_format, help="run in fixed point, total:integer bits")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("compare", help="check the sparse path against the masked dense oracle")
    p.add_argument("model")
    p.add_argument("tensors", nargs="*")
    p.add_argument("--random", type=int, default=0, help="also test N synthetic inputs")
    p.add_argument("--seed", type=int)
    p.add_argument("--format", type=_fixed_format)
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("cost", help="operation counts and ratios for a model or parameter set")
    p.add_argument("--model")
    p.add_argument("--n-max", type=int, default=20)
    p.add_argument("--height", type=int, default=63)
    p.add_argument("--width", type=int, default=63)
    p.add_argument("--c-in", type=int, default=1)
    p.add_argument("--c-out", type=int, default=1)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--out")
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("sweep", help="cost tables over n_max, input sizes and channel pairs")
    p.add_argument("--n-max-list", type=_int_list, default=[5, 10, 15, 20, 25, 30])
    p.add_argument("--sizes", type=_int_list, default=[500, 1000, 1500, 2000, 2500, 3000])
    p.add_argument("--channels", type=_channel_pairs, default=_channel_pairs("1:1,1:3,2:1,2:2,3:1,3:3"))
    p.add_argument("--kernels", type=_int_list, default=[3, 5])
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gen-weights", help="write a preset model with seeded random weights")
    p.add_argument("output")
    p.add_argument("--preset", required=True, choices=sorted(PRESETS))
    p.add_argument("--seed", type=int)
    p.add_argument("--n-max", default="large", help="integer or tiny/small/medium/large")
    p.add_argument("--channels", type=_int_list, default=[2, 2])
    p.add_argument("--hidden", type=int)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--threshold", type=float, default=0.0)
    p.add_argument("--format", type=_fixed_format, help="store as a fixed-point model, total:integer")
    p.set_defaults(func=cmd_gen_weights)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, SparseCNNError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
