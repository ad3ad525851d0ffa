import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import avg_pool_loops, conv_loops, random_kernel, random_sparse_image, scan_oracle
from sparsecnn.counters import OpCounter
from sparsecnn.dense_ref import (
    active_mask,
    avg_pool2d,
    conv2d_same,
    flatten,
    fully_connected,
    masked_conv_oracle,
    naive_active_scan,
    relu_dense,
)
from sparsecnn.errors import ShapeError
from sparsecnn.numerics import DenseTensor, FixedFormat, quantize_tensor
from sparsecnn.sparse_core import KernelWeights


def test_conv_all_ones_counts_taps():
    x = DenseTensor.from_array(np.ones((3, 3)))
    out = conv2d_same(x, KernelWeights(3, 1, 1, np.ones(9), [0.0])).array[:, :, 0]
    assert out.tolist() == [[4, 6, 4], [6, 9, 6], [4, 6, 4]]


def test_conv_identity_kernel():
    rng = np.random.default_rng(2)
    x = DenseTensor.from_array(rng.normal(size=(5, 6, 2)))
    w = np.zeros((3, 3, 2, 2))
    w[1, 1] = np.eye(2)
    out = conv2d_same(x, KernelWeights.from_tensor(w, [0.0, 0.0]))
    assert np.array_equal(out.array, x.array)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([1, 3, 5]), st.integers(1, 3), st.integers(1, 3))
def test_conv_matches_sextuple_loop(seed, k, c_in, c_out):
    rng = np.random.default_rng(seed)
    x = DenseTensor.from_array(rng.normal(size=(5, 5, c_in)))
    kw = random_kernel(rng, k, c_in, c_out)
    got = conv2d_same(x, kw).array
    assert np.allclose(got, conv_loops(x.array, kw.tensor(), kw.b), atol=1e-12, rtol=0)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([FixedFormat(8, 3), FixedFormat(16, 6)]))
def test_conv_fixed_matches_loop(seed, fmt):
    rng = np.random.default_rng(seed)
    x = quantize_tensor(DenseTensor.from_array(rng.normal(size=(4, 5, 2))), fmt)
    kw = random_kernel(rng, 3, 2, 2)
    got = conv2d_same(x, kw, fmt)
    assert got.fmt == fmt
    assert np.array_equal(got.array, conv_loops(x.array, kw.tensor(), kw.b, fmt, fmt))


@pytest.mark.parametrize("h,w,ci,co,k", [(4, 5, 1, 1, 3), (6, 6, 2, 3, 5), (3, 7, 3, 1, 1)])
def test_conv_multiply_count(h, w, ci, co, k):
    c = OpCounter()
    conv2d_same(DenseTensor.zeros(h, w, ci), KernelWeights(k, ci, co, np.zeros(k * k * ci * co), np.zeros(co)), counter=c)
    assert c.mults == h * w * ci * co * k * k


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-3, 3))
def test_conv_linearity(seed, alpha):
    rng = np.random.default_rng(seed)
    x = DenseTensor.from_array(rng.normal(size=(4, 4, 2)))
    kw = random_kernel(rng, 3, 2, 2)
    lhs = conv2d_same(DenseTensor.from_array(alpha * x.array), kw).array
    rhs = alpha * (conv2d_same(x, kw).array - kw.b) + kw.b
    assert np.allclose(lhs, rhs, atol=1e-9)


def test_conv_channel_mismatch():
    with pytest.raises(ShapeError):
        conv2d_same(DenseTensor.zeros(3, 3, 2), KernelWeights(3, 1, 1, np.zeros(9), [0.0]))


def test_masked_oracle_full_and_empty():
    rng = np.random.default_rng(3)
    x = DenseTensor.from_array(rng.normal(size=(4, 5, 1)))
    kw = random_kernel(rng, 3, 1, 2)
    everything = [(i, j) for i in range(1, 5) for j in range(1, 6)]
    assert masked_conv_oracle(x, everything, kw) == conv2d_same(x, kw)
    assert not masked_conv_oracle(x, [], kw).data.any()


def test_active_mask_rejects_out_of_grid():
    with pytest.raises(ValueError):
        active_mask((3, 3), [(0, 1)])


def test_avg_pool_examples():
    x = DenseTensor.from_array(np.array([[1.0, 2.0], [3.0, 4.0]]))
    assert avg_pool2d(x, 2).data.tolist() == [2.5]
    ragged = avg_pool2d(DenseTensor.from_array(np.ones((3, 3))), 2).array[:, :, 0]
    assert ragged.tolist() == [[1.0, 0.5], [0.5, 0.25]]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.sampled_from([None, FixedFormat(8, 3), FixedFormat(16, 6)]))
def test_avg_pool_matches_loop(seed, p, fmt):
    rng = np.random.default_rng(seed)
    x = DenseTensor.from_array(rng.normal(size=(int(rng.integers(1, 9)), int(rng.integers(1, 9)), 2)))
    if fmt is not None:
        x = quantize_tensor(x, fmt)
    got = avg_pool2d(x, p, fmt).array
    want = avg_pool_loops(x.array, p, fmt, fmt)
    if fmt is None:
        assert np.allclose(got, want, atol=1e-12)
    else:
        assert np.array_equal(got, want)


def test_flatten_channel_last():
    arr = np.arange(12.0).reshape(2, 3, 2)
    assert flatten(DenseTensor.from_array(arr)).tolist() == arr.reshape(-1).tolist()


def test_fully_connected():
    v = np.array([1.0, -2.0, 3.0])
    assert fully_connected(v, np.eye(3), np.zeros(3)).tolist() == v.tolist()
    assert fully_connected(v, [[1.0, 1.0, 1.0]], [0.5]).tolist() == [2.5]
    with pytest.raises(ShapeError):
        fully_connected(v, np.eye(2), np.zeros(2))


def test_fully_connected_fixed_rounds_once():
    fmt = FixedFormat(8, 3)
    # each product 1/256 would round to 0 on its own; the exact sum is 1/16
    v = np.full(16, 0.0625)
    w = np.full((1, 16), 0.0625)
    assert fully_connected(v, w, [0.0], fmt, fmt).tolist() == [0.0625]


def test_relu_dense():
    x = DenseTensor.from_array(np.array([[-1.0, 2.0]]))
    assert relu_dense(x).data.tolist() == [0.0, 2.0]


def test_naive_scan_examples():
    assert naive_active_scan(DenseTensor.zeros(3, 3), 0.0, 4) == ([], [])
    x = DenseTensor.from_array(np.array([[0.0, -1.0], [2.0, 0.0]]))
    coords, _ = naive_active_scan(x, float("-inf"), 3)
    assert coords == [(1, 1), (1, 2), (2, 1)]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 30))
def test_naive_scan_matches_list_oracle(seed, n_max):
    rng = np.random.default_rng(seed)
    x = random_sparse_image(rng, 8, 7, 2, 0.3)
    coords, feats = naive_active_scan(x, 0.2, n_max)
    hits = scan_oracle(x.array, 0.2, n_max)
    assert coords == [(i, j) for i, j, _ in hits]
    assert feats == [f for _, _, f in hits]
