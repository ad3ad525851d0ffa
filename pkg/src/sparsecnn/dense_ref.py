"""Dense reference layers and the masked-dense oracles for the sparse path.

Everything here works on whole H x W x C grids and never looks at the sparse
arrays, so it can serve as ground truth for :mod:`sparsecnn.sparse_core`.
"""
from __future__ import annotations

from typing import Iterable

import numpy as np

from .counters import OpCounter
from .errors import ShapeError
from .numerics import (
    DenseTensor,
    FixedFormat,
    as_raw_sum_dtype,
    from_raw,
    quantize_array,
    requantize,
    to_raw,
)
from .sparse_core import KernelWeights, apply_activation


def _resolve_formats(x: DenseTensor, fmt: FixedFormat | None):
    out_fmt = fmt if fmt is not None else x.fmt
    if out_fmt is not None and x.fmt is None:
        raise ValueError("fixed-point layer needs a quantized input tensor")
    return x.fmt, out_fmt


def conv2d_same(
    x: DenseTensor,
    kw: KernelWeights,
    fmt: FixedFormat | None = None,
    counter: OpCounter | None = None,
) -> DenseTensor:
    """Unit-stride convolution with zero 'same' padding.

    ``O[i, j, co] = b[co] + sum_{ci, kh, kw} I[i+kh-R, j+kw-R, ci] * T[kh, kw, ci, co]``
    """
    if x.channels != kw.c_in:
        raise ShapeError(f"input has {x.channels} channels, kernel expects {kw.c_in}")
    hh, ww, _ = x.shape
    k, r = kw.k, kw.radius
    in_fmt, out_fmt = _resolve_formats(x, fmt)
    t = kw.tensor()

    if out_fmt is None:
        img = x.array
        w_t, bias, dtype = t, kw.b, np.float64
    else:
        dtype = as_raw_sum_dtype([in_fmt.total_bits, out_fmt.total_bits], k * k * kw.c_in + 1)
        img = to_raw(x.array, in_fmt).astype(dtype)
        w_t = quantize_array(t, out_fmt).astype(dtype)
        bias = quantize_array(kw.b, out_fmt).astype(dtype) * (1 << in_fmt.frac_bits)

    padded = np.zeros((hh + 2 * r, ww + 2 * r, kw.c_in), dtype=dtype)
    padded[r : r + hh, r : r + ww] = img
    acc = np.zeros((hh, ww, kw.c_out), dtype=dtype)
    for kh in range(k):
        for kx in range(k):
            patch = padded[kh : kh + hh, kx : kx + ww]
            acc = acc + np.tensordot(patch, w_t[kh, kx], axes=([2], [0]))
            if counter is not None:
                counter.mults += hh * ww * kw.c_in * kw.c_out
                counter.adds += hh * ww * kw.c_in * kw.c_out
    acc = acc + bias

    if out_fmt is None:
        return DenseTensor.from_array(acc)
    raw = requantize(acc, in_fmt.frac_bits + out_fmt.frac_bits, out_fmt)
    return DenseTensor.from_array(from_raw(raw, out_fmt), out_fmt)


def active_mask(shape: tuple[int, int], active: Iterable[tuple[int, int]]) -> np.ndarray:
    """Boolean H x W mask from 1-based (h, w) coordinates."""
    mask = np.zeros(shape, dtype=bool)
    for h, w in active:
        if not (1 <= h <= shape[0] and 1 <= w <= shape[1]):
            raise ValueError(f"active coordinate {(h, w)} outside {shape}")
        mask[h - 1, w - 1] = True
    return mask


def mask_tensor(x: DenseTensor, mask: np.ndarray) -> DenseTensor:
    return DenseTensor.from_array(np.where(mask[:, :, None], x.array, 0.0), x.fmt)


def masked_conv_oracle(
    x: DenseTensor,
    active: Iterable[tuple[int, int]],
    kw: KernelWeights,
    fmt: FixedFormat | None = None,
    counter: OpCounter | None = None,
) -> DenseTensor:
    """Convolution restricted to ``active``: mask input, convolve, mask output."""
    mask = active_mask((x.height, x.width), active)
    out = conv2d_same(mask_tensor(x, mask), kw, fmt, counter)
    return mask_tensor(out, mask)


def relu_dense(x: DenseTensor) -> DenseTensor:
    return DenseTensor.from_array(apply_activation(x.array, "relu"), x.fmt)


def activation_dense(x: DenseTensor, kind: str) -> DenseTensor:
    return DenseTensor.from_array(apply_activation(x.array, kind), x.fmt)


def avg_pool2d(x: DenseTensor, p: int, fmt: FixedFormat | None = None) -> DenseTensor:
    """Average pooling with window and stride ``p``.

    Ragged borders are zero padded up to a multiple of ``p`` and still divided
    by ``p**2``.
    """
    if p < 1:
        raise ValueError("pool size must be >= 1")
    hh, ww, cc = x.shape
    oh, ow = -(-hh // p), -(-ww // p)
    in_fmt, out_fmt = _resolve_formats(x, fmt)
    src = x.array if out_fmt is None else to_raw(x.array, in_fmt)
    padded = np.zeros((oh * p, ow * p, cc), dtype=src.dtype)
    padded[:hh, :ww] = src
    sums = padded.reshape(oh, p, ow, p, cc).sum(axis=(1, 3))
    if out_fmt is None:
        return DenseTensor.from_array(sums / (p * p))
    raw = requantize(sums, in_fmt.frac_bits, out_fmt, divisor=p * p)
    return DenseTensor.from_array(from_raw(raw, out_fmt), out_fmt)


def flatten(x: DenseTensor) -> np.ndarray:
    return np.array(x.data)


def fully_connected(
    v,
    weight,
    bias,
    fmt: FixedFormat | None = None,
    in_fmt: FixedFormat | None = None,
    counter: OpCounter | None = None,
) -> np.ndarray:
    """``weight @ v + bias`` with ``weight`` shaped (out_dim, in_dim)."""
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    weight = np.asarray(weight, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64).reshape(-1)
    if weight.ndim != 2 or weight.shape[1] != v.size or weight.shape[0] != bias.size:
        raise ShapeError(
            f"dense layer {weight.shape} with bias {bias.shape} cannot take input of length {v.size}"
        )
    if counter is not None:
        counter.mults += weight.size
        counter.adds += weight.size
    out_fmt = fmt if fmt is not None else in_fmt
    if out_fmt is None:
        return weight @ v + bias
    if in_fmt is None:
        raise ValueError("fixed-point dense layer needs the input format")
    dtype = as_raw_sum_dtype([in_fmt.total_bits, out_fmt.total_bits], v.size + 1)
    w_raw = quantize_array(weight, out_fmt).astype(dtype)
    b_raw = quantize_array(bias, out_fmt).astype(dtype) * (1 << in_fmt.frac_bits)
    acc = w_raw @ to_raw(v, in_fmt).astype(dtype) + b_raw
    return from_raw(requantize(acc, in_fmt.frac_bits + out_fmt.frac_bits, out_fmt), out_fmt)


def naive_active_scan(
    x: DenseTensor, t: float, n_max: int
) -> tuple[list[tuple[int, int]], list[list[float]]]:
    """Single row-major pass keeping the first ``n_max`` pixels with channel 0 > t.

    Returns 1-based coordinates and the full channel vectors.
    """
    coords, feats = [], []
    arr = x.array
    for i in range(x.height):
        for j in range(x.width):
            if len(coords) >= n_max:
                return coords, feats
            if arr[i, j, 0] > t:
                coords.append((i + 1, j + 1))
                feats.append([float(v) for v in arr[i, j]])
    return coords, feats
