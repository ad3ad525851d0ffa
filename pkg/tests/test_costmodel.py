import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import random_kernel, random_sparse_image
from sparsecnn.costmodel import (
    CALIBRATED_LABEL,
    STANDARD_LATENCY,
    TABLE1_II,
    TABLE1_LATENCY,
    CycleCalibration,
    act_cost,
    active_fraction,
    calibrate_cycles,
    conv_cost,
    default_calibration,
    estimate_cycles,
    model_cost,
    tree_depth,
)
from sparsecnn.counters import OpCounter
from sparsecnn.dense_ref import conv2d_same
from sparsecnn.model import gen_random_model
from sparsecnn.sparse_core import ReduceConfig, sparse_conv, sparse_input_reduce


@pytest.mark.parametrize("h,w,d", [(63, 63, 12), (48, 48, 12), (56, 56, 12), (1, 1, 0), (2, 1, 1), (32, 32, 10), (33, 31, 10), (33, 32, 11)])
def test_tree_depth(h, w, d):
    assert tree_depth(h, w) == d


def test_tree_depth_sweep():
    assert [tree_depth(n) for n in (500, 1000, 1500, 2000, 2500, 3000)] == [9, 10, 11, 11, 12, 12]


@given(st.integers(1, 1 << 20))
def test_tree_depth_is_ceil_log2(n):
    assert 2 ** tree_depth(n) >= n
    assert n == 1 or 2 ** (tree_depth(n) - 1) < n


def test_tree_depth_steps_only_at_powers_of_two():
    prev = tree_depth(1)
    for n in range(2, 5000):
        d = tree_depth(n)
        assert d >= prev
        if d != prev:
            assert n - 1 & (n - 2) == 0  # n-1 is a power of two
        prev = d


def test_conv_cost_single_channel_63x63():
    c = conv_cost(20, 1, 1, 63, 63, 3)
    assert (c.sparse_mults, c.dense_mults) == (400, 35721)
    assert c.ratio == Fraction(400, 35721)
    assert round(float(c.ratio) * 100, 2) == 1.12
    assert conv_cost(20, 2, 3, 9, 9, 3).sparse_mults == conv_cost(20, 2, 3, 9, 9, 5).sparse_mults


def test_active_fraction_and_act_cost():
    f = active_fraction(20, 63, 63)
    assert f == Fraction(20, 3969)
    assert f < Fraction(1, 100)
    assert round(float(f) * 100, 3) == 0.504
    assert act_cost(20, 1, 63, 63) == act_cost(20, 7, 63, 63) == f
    assert act_cost(64, 3, 8, 8) == 1


@given(st.integers(1, 40), st.integers(1, 64), st.integers(1, 64), st.sampled_from([1, 3, 5, 7]))
def test_ratio_below_one_in_sparse_regime(n, h, w, k):
    c = conv_cost(n, 2, 2, h, w, k)
    if n * n < h * w * k * k:
        assert c.ratio < 1


def test_cost_parameters_must_be_positive():
    with pytest.raises(ValueError):
        conv_cost(0, 1, 1, 4, 4, 3)
    with pytest.raises(ValueError):
        act_cost(1, 1, 0, 4)
    with pytest.raises(ValueError):
        tree_depth(0)


@pytest.mark.parametrize("ci,co", [(1, 1), (1, 3), (2, 1), (2, 2), (3, 1), (3, 3)])
@pytest.mark.parametrize("k", [3, 5])
def test_counters_match_formula(ci, co, k):
    rng = np.random.default_rng(ci * 10 + co)
    x = random_sparse_image(rng, 9, 11, ci, 0.3)
    kw = random_kernel(rng, k, ci, co)
    sc, dc = OpCounter(), OpCounter()
    sparse_conv(sparse_input_reduce(x, ReduceConfig(0.0, 7)), kw, counter=sc)
    conv2d_same(x, kw, counter=dc)
    cost = conv_cost(7, ci, co, 9, 11, k)
    assert (sc.mults, dc.mults) == (cost.sparse_mults, cost.dense_mults)


# -- calibration -----------------------------------------------------------


def test_table_values():
    assert TABLE1_II == ((8, 35), (12, 52), (16, 67), (20, 84))
    assert TABLE1_LATENCY["neutrino"][8][-1] == (20, 133)
    assert STANDARD_LATENCY["neutrino"] == (9733, 9736)


def test_calibration_fit():
    cal = default_calibration()
    assert math.isclose(cal.slope, 4.05)
    assert math.isclose(cal.intercept, 2.8, abs_tol=1e-9)
    preds = [estimate_cycles(cal, n) for n, _ in TABLE1_II]
    assert preds == [35, 51, 68, 84]
    assert all(abs(p - y) <= 2 for p, (_, y) in zip(preds, TABLE1_II))
    assert math.isclose(sum(cal.residuals), 0.0, abs_tol=1e-9)


def test_estimates_monotone():
    cal = default_calibration()
    est = [estimate_cycles(cal, n) for n in range(5, 31)]
    assert all(b > a for a, b in zip(est, est[1:]))


def test_calibration_ols_against_numpy():
    pts = [(5, 20.0), (10, 41.0), (30, 125.0)]
    cal = calibrate_cycles(pts)
    slope, icpt = np.polyfit([p[0] for p in pts], [p[1] for p in pts], 1)
    assert math.isclose(cal.slope, slope) and math.isclose(cal.intercept, icpt)


@pytest.mark.parametrize("pts", [[(8, 35)], [(8, 35), (8, 35)], []])
def test_calibration_needs_two_distinct_points(pts):
    with pytest.raises(ValueError):
        calibrate_cycles(pts)


def test_negative_slope_rejected():
    with pytest.raises(ValueError):
        calibrate_cycles([(1, 10), (2, 5)])
    with pytest.raises(ValueError):
        CycleCalibration(-1.0, 0.0, ())


# -- model reports ---------------------------------------------------------


def test_model_report_totals_and_label():
    m = gen_random_model(0, "neutrino", channels=(1, 1))
    rep = model_cost(m, default_calibration())
    d = rep.to_dict()
    assert d["cycle_estimates"] == CALIBRATED_LABEL
    for key, total in rep.totals.items():
        assert total == sum(layer[key] for layer in d["layers"])
    first = rep.layers[0]
    assert first.tree_depth == 12 and first.estimated_cycles == 84
    conv = rep.layers[1]
    assert (conv.mult_count, conv.dense_mult_count) == (400, 35721)


def test_model_report_matches_instrumented_conv_counts():
    m = gen_random_model(1, "mnist")
    rep = model_cost(m)
    x = random_sparse_image(np.random.default_rng(0), 48, 48, 1, 0.01)
    from sparsecnn.model import run_sparse

    trace = []
    run_sparse(m, x, trace=trace)
    conv_rows = [lc for lc in rep.layers if lc.name.endswith("sparse_conv")]
    convs = [(i, l) for i, l in enumerate(m.layers) if l.kind == "sparse_conv"]
    for row, (i, layer) in zip(conv_rows, convs):
        c = OpCounter()
        sparse_conv(trace[i - 1], layer.kernel, counter=c)
        assert row.mult_count == c.mults
