"""Sparse layers operating on compact feature/coordinate arrays.

A :class:`SparseBundle` holds up to ``n_max`` retained pixels: ``feat`` is the
(n_max, C) feature array and ``hash`` the (n_max, 2) array of 1-based
(height, width) coordinates. Unused slots carry the sentinel coordinate (0, 0)
and all-zero features.

Every layer accepts an optional :class:`~sparsecnn.counters.OpCounter`.
In fixed-point mode (bundle ``fmt`` set) features stay on the format grid and
all sums are exact integers, rounded once on output.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

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

NO_ACTIVE = (0.0, 0)
ACTIVATIONS = ("relu", "linear")


@dataclass(frozen=True)
class ReduceConfig:
    threshold: float
    n_max: int

    def __post_init__(self):
        if self.n_max < 1:
            raise ValueError("n_max must be >= 1")
        # the (0, 0) "nothing found" pair and the mask-to-zero step are only
        # inactive when the threshold is non-negative
        if not (math.isfinite(self.threshold) and self.threshold >= 0):
            raise ValueError(f"threshold must be finite and >= 0, got {self.threshold}")


@dataclass(frozen=True)
class KernelWeights:
    """Conv weights, flat in position -> out-channel -> in-channel order.

    ``pos = kh*K + kw`` where tap (kh, kw) reads input pixel
    ``(i + kh - R, j + kw - R)`` for output pixel (i, j).
    """

    k: int
    c_in: int
    c_out: int
    w: np.ndarray = field(repr=False)
    b: np.ndarray = field(repr=False)

    def __post_init__(self):
        w = np.array(self.w, dtype=np.float64).reshape(-1)
        b = np.array(self.b, dtype=np.float64).reshape(-1)
        if self.k < 1 or self.k % 2 == 0:
            raise ValueError(f"kernel size must be odd and positive, got {self.k}")
        if self.c_in < 1 or self.c_out < 1:
            raise ValueError("channel counts must be positive")
        if w.size != self.k * self.k * self.c_in * self.c_out:
            raise ShapeError(
                f"weight length {w.size} != K^2*c_in*c_out = {self.k**2 * self.c_in * self.c_out}"
            )
        if b.size != self.c_out:
            raise ShapeError(f"bias length {b.size} != c_out = {self.c_out}")
        w.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "b", b)

    @property
    def radius(self) -> int:
        return (self.k - 1) // 2

    def index(self, pos: int, c_out: int, c_in: int) -> int:
        return self.c_out * self.c_in * pos + self.c_in * c_out + c_in

    def tensor(self) -> np.ndarray:
        """Weights as a (K, K, C_in, C_out) array."""
        return self.w.reshape(self.k, self.k, self.c_out, self.c_in).transpose(0, 1, 3, 2)

    @classmethod
    def from_tensor(cls, t, b) -> "KernelWeights":
        t = np.asarray(t, dtype=np.float64)
        k, k2, c_in, c_out = t.shape
        if k != k2:
            raise ShapeError("kernel must be square")
        return cls(k, c_in, c_out, t.transpose(0, 1, 3, 2).reshape(-1), b)

    def __eq__(self, other):
        if not isinstance(other, KernelWeights):
            return NotImplemented
        return (
            (self.k, self.c_in, self.c_out) == (other.k, other.c_in, other.c_out)
            and np.array_equal(self.w, other.w)
            and np.array_equal(self.b, other.b)
        )

    __hash__ = None


def offset_to_pos(dh: int, dw: int, k: int) -> int | None:
    """Kernel position for coordinate offset out - in, or None outside the field."""
    r = (k - 1) // 2
    if abs(dh) > r or abs(dw) > r:
        return None
    return (r - dh) * k + (r - dw)


@dataclass(frozen=True)
class SparseBundle:
    feat: np.ndarray = field(repr=False)
    hash: np.ndarray = field(repr=False)
    grid_h: int
    grid_w: int
    fmt: FixedFormat | None = None

    def __post_init__(self):
        feat = np.array(self.feat, dtype=np.float64)
        hsh = np.array(self.hash, dtype=np.int64)
        if feat.ndim != 2 or hsh.shape != (feat.shape[0], 2):
            raise ShapeError(f"feat {feat.shape} and hash {hsh.shape} do not pair up")
        if feat.shape[0] < 1 or feat.shape[1] < 1:
            raise ShapeError("bundle needs n_max >= 1 and C >= 1")
        sentinel = (hsh == 0).all(axis=1)
        valid = ~sentinel
        h, w = hsh[valid, 0], hsh[valid, 1]
        if ((h < 1) | (h > self.grid_h) | (w < 1) | (w > self.grid_w)).any():
            raise ValueError("coordinate outside the grid")
        if (feat[sentinel] != 0).any():
            raise ValueError("sentinel slots must carry zero features")
        feat.flags.writeable = False
        hsh.flags.writeable = False
        object.__setattr__(self, "feat", feat)
        object.__setattr__(self, "hash", hsh)

    @property
    def n_max(self) -> int:
        return self.feat.shape[0]

    @property
    def channels(self) -> int:
        return self.feat.shape[1]

    @property
    def valid(self) -> np.ndarray:
        """Boolean mask of non-sentinel slots."""
        return (self.hash != 0).any(axis=1)

    @property
    def n_active(self) -> int:
        return int(self.valid.sum())

    @property
    def flat_feat(self) -> np.ndarray:
        return self.feat.reshape(-1)

    @property
    def flat_hash(self) -> np.ndarray:
        return self.hash.reshape(-1)

    def coords(self) -> list[tuple[int, int]]:
        """1-based coordinates of the non-sentinel slots, in slot order."""
        return [tuple(int(v) for v in row) for row in self.hash[self.valid]]

    def __eq__(self, other):
        if not isinstance(other, SparseBundle):
            return NotImplemented
        return (
            (self.grid_h, self.grid_w, self.fmt) == (other.grid_h, other.grid_w, other.fmt)
            and np.array_equal(self.feat, other.feat)
            and np.array_equal(self.hash, other.hash)
        )

    __hash__ = None


def dump_bundle(b: SparseBundle) -> str:
    """Debug text: one ``i h w f0 .. fC-1`` line per slot."""
    lines = []
    for i in range(b.n_max):
        h, w = (int(v) for v in b.hash[i])
        feats = " ".join(repr(float(f)) for f in b.feat[i])
        lines.append(f"{i} {h} {w} {feats}")
    return "\n".join(lines) + "\n"


# -- input reduction -------------------------------------------------------


def op_active(a: tuple[float, int], b: tuple[float, int], t: float) -> tuple[float, int]:
    """Pairwise combiner: ``a`` if active, else ``b`` if active, else (0, 0)."""
    if a[0] > t:
        return a
    if b[0] > t:
        return b
    return NO_ACTIVE


def find_active(values, t: float, counter: OpCounter | None = None) -> tuple[float, int]:
    """Leftmost pair with value > t, found by the fixed recursive split tree.

    ``values`` is a sequence of (value, index) pairs or a ``(vals, idx)`` pair
    of arrays. The tree splits N at the largest power of two below N; its depth
    (ceil(log2 N)) is recorded in ``counter.max_depth``.
    """
    if isinstance(values, tuple) and len(values) == 2 and isinstance(values[0], np.ndarray):
        vals, idx = values
    else:
        values = list(values)
        vals = np.array([float(v) for v, _ in values], dtype=np.float64)
        idx = np.array([int(i) for _, i in values], dtype=np.int64)
    n = vals.size
    if n == 0:
        raise ValueError("find_active needs at least one element")
    (v, i), depth = _find(vals, idx, 0, n, t, counter)
    if counter is not None:
        counter.max_depth = max(counter.max_depth, depth)
    return v, i


def _find(vals, idx, lo, n, t, counter):
    if n == 1:
        v = float(vals[lo])
        return ((v, int(idx[lo])) if v > t else NO_ACTIVE), 0
    if n & (n - 1) == 0:
        return _reduce_perfect(vals[lo : lo + n], idx[lo : lo + n], t, counter)
    left = 1 << (n - 1).bit_length() - 1
    u, du = _find(vals, idx, lo, left, t, counter)
    v, dv = _find(vals, idx, lo + left, n - left, t, counter)
    if counter is not None:
        counter.compares += 1
    return op_active(u, v, t), 1 + max(du, dv)


def _reduce_perfect(vals, idx, t, counter):
    # a power-of-two block splits into equal halves all the way down, so the
    # recursive tree is a perfect binary tree: evaluate it one level at a time.
    # Each node carries the leaf slot it selected, -1 standing in for (0, 0).
    win = np.where(vals > t, np.arange(vals.size), -1)
    depth = 0
    while win.size > 1:
        a, b = win[0::2], win[1::2]
        if counter is not None:
            counter.compares += a.size
        win = np.where(a >= 0, a, b)
        depth += 1
    w = int(win[0])
    return ((float(vals[w]), int(idx[w])) if w >= 0 else NO_ACTIVE), depth


def sparse_input_reduce(
    x: DenseTensor, cfg: ReduceConfig, counter: OpCounter | None = None
) -> SparseBundle:
    """Retain up to ``n_max`` active pixels (channel 0 > threshold), row-major.

    Each pass extracts the leftmost active pixel with :func:`find_active` and
    masks it in the scan array. Slots left over become sentinels; actives
    beyond the first ``n_max`` are dropped.
    """
    hh, ww, cc = x.shape
    data = x.data
    scan = data[0::cc].copy()
    idx = np.arange(hh * ww, dtype=np.int64)
    feat = np.zeros((cfg.n_max, cc))
    hsh = np.zeros((cfg.n_max, 2), dtype=np.int64)
    for i in range(cfg.n_max):
        v, j = find_active((scan, idx), cfg.threshold, counter)
        if not v > cfg.threshold:
            # nothing left; the slot stays a sentinel
            continue
        feat[i, 0] = v
        feat[i, 1:] = data[cc * j + 1 : cc * j + cc]
        hsh[i] = (j // ww + 1, j % ww + 1)
        scan[j] = 0.0
    return SparseBundle(feat, hsh, hh, ww, x.fmt)


# -- convolution -----------------------------------------------------------


def sparse_conv(
    bundle: SparseBundle,
    kw: KernelWeights,
    fmt: FixedFormat | None = None,
    counter: OpCounter | None = None,
) -> SparseBundle:
    """Sparsity-preserving convolution over the retained pixels.

    For every (output slot, input slot) pair the coordinate offset selects a
    kernel tap directly, so the work is ``n_max**2 * c_in * c_out`` products
    for any K. The hash array is passed through untouched.

    ``fmt`` is the layer's fixed-point format (weights and output); it defaults
    to the input bundle's format. Float bundles ignore it unless given.
    """
    if bundle.channels != kw.c_in:
        raise ShapeError(f"bundle has {bundle.channels} channels, kernel expects {kw.c_in}")
    n = bundle.n_max
    r = kw.radius
    valid = bundle.valid
    hsh = bundle.hash
    dh = hsh[:, None, 0] - hsh[None, :, 0]  # [p_out, p_in]
    dw = hsh[:, None, 1] - hsh[None, :, 1]
    in_field = (np.abs(dh) <= r) & (np.abs(dw) <= r) & valid[None, :]
    pos = np.where(in_field, (r - dh) * kw.k + (r - dw), 0)
    if counter is not None:
        counter.mults += n * n * kw.c_out * kw.c_in
        counter.adds += n * n * kw.c_out * kw.c_in + n * kw.c_out
        counter.compares += n * n * kw.c_out

    in_fmt = bundle.fmt
    out_fmt = fmt if fmt is not None else in_fmt
    if out_fmt is None:
        taps = kw.w.reshape(kw.k * kw.k, kw.c_out, kw.c_in)[pos]  # [p_out, p_in, c_out, c_in]
        taps = np.where(in_field[:, :, None, None], taps, 0.0)
        out = np.einsum("opkc,pc->ok", taps, bundle.feat) + kw.b[None, :]
        out[~valid] = 0.0
        return SparseBundle(out, hsh, bundle.grid_h, bundle.grid_w)

    if in_fmt is None:
        raise ValueError("fixed-point convolution needs a quantized input bundle")
    dtype = as_raw_sum_dtype([in_fmt.total_bits, out_fmt.total_bits], n * kw.c_in + 1)
    w_raw = quantize_array(kw.w, out_fmt).astype(dtype).reshape(kw.k * kw.k, kw.c_out, kw.c_in)
    b_raw = quantize_array(kw.b, out_fmt).astype(dtype)
    x_raw = to_raw(bundle.feat, in_fmt).astype(dtype)
    taps = np.where(in_field[:, :, None, None], w_raw[pos], 0).astype(dtype)
    acc = np.einsum("opkc,pc->ok", taps, x_raw) + b_raw[None, :] * (1 << in_fmt.frac_bits)
    raw = requantize(acc, in_fmt.frac_bits + out_fmt.frac_bits, out_fmt)
    raw[~valid] = 0
    return SparseBundle(from_raw(raw, out_fmt), hsh, bundle.grid_h, bundle.grid_w, out_fmt)


# -- activation ------------------------------------------------------------


def apply_activation(values: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(values, 0.0)
    if kind == "linear":
        return np.array(values, dtype=np.float64)
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def sparse_activation(
    bundle: SparseBundle, kind: str, counter: OpCounter | None = None
) -> SparseBundle:
    out = apply_activation(bundle.feat, kind)
    if counter is not None and kind == "relu":
        counter.compares += out.size
    return SparseBundle(out, bundle.hash, bundle.grid_h, bundle.grid_w, bundle.fmt)


# -- pooling ---------------------------------------------------------------


def pooled_coord(coord, p: int):
    """1-based coordinate after pooling by ``p``."""
    return (coord - 1) // p + 1


def sparse_avg_pool(
    bundle: SparseBundle,
    p: int,
    fmt: FixedFormat | None = None,
    counter: OpCounter | None = None,
) -> SparseBundle:
    """Average-pool the retained pixels.

    Pixels sharing a pool are summed into the first slot that lands there and
    divided by ``p**2``; the other slots of that pool become sentinels. Grids
    that are not a multiple of ``p`` pool to ``ceil(grid / p)``.
    """
    if p < 1:
        raise ValueError("pool size must be >= 1")
    n, cc = bundle.n_max, bundle.channels
    valid = bundle.valid
    pooled = np.where(valid[:, None], pooled_coord(bundle.hash, p), 0)
    in_fmt = bundle.fmt
    out_fmt = fmt if fmt is not None else in_fmt
    fixed = out_fmt is not None
    if fixed and in_fmt is None:
        raise ValueError("fixed-point pooling needs a quantized input bundle")
    src = to_raw(bundle.feat, in_fmt) if fixed else bundle.feat

    out_hash = np.zeros((n, 2), dtype=np.int64)
    sums = np.zeros((n, cc), dtype=np.int64 if fixed else np.float64)
    keep = np.zeros(n, dtype=bool)
    consumed = ~valid
    for i in range(n):
        if consumed[i]:
            continue
        members = ~consumed & (pooled == pooled[i]).all(axis=1)
        sums[i] = src[members].sum(axis=0)
        consumed = consumed | members
        out_hash[i] = pooled[i]
        keep[i] = True
    if counter is not None:
        counter.compares += n * n * cc
        counter.adds += int(valid.sum()) * cc
        counter.mults += n * cc

    if fixed:
        raw = requantize(sums, in_fmt.frac_bits, out_fmt, divisor=p * p)
        raw[~keep] = 0
        out = from_raw(raw, out_fmt)
    else:
        out = sums / (p * p)
    return SparseBundle(
        out, out_hash, -(-bundle.grid_h // p), -(-bundle.grid_w // p), out_fmt if fixed else None
    )


# -- flatten ---------------------------------------------------------------


def sparse_flatten(bundle: SparseBundle) -> np.ndarray:
    """Scatter retained pixels into a zeroed channel-last flat array."""
    cc = bundle.channels
    out = np.zeros(bundle.grid_h * bundle.grid_w * cc)
    for i in np.flatnonzero(bundle.valid):
        h, w = bundle.hash[i]
        pix = (h - 1) * bundle.grid_w + (w - 1)
        out[cc * pix : cc * pix + cc] += bundle.feat[i]
    return out


def bundle_from_pixels(
    pixels: Sequence[tuple[int, int, Sequence[float]]],
    n_max: int,
    grid_h: int,
    grid_w: int,
    fmt: FixedFormat | None = None,
) -> SparseBundle:
    """Build a bundle from ``(h, w, features)`` triples (1-based coordinates)."""
    if len(pixels) > n_max:
        raise ValueError("more pixels than slots")
    cc = len(pixels[0][2]) if pixels else 1
    feat = np.zeros((n_max, cc))
    hsh = np.zeros((n_max, 2), dtype=np.int64)
    for i, (h, w, f) in enumerate(pixels):
        hsh[i] = (h, w)
        feat[i] = f
    return SparseBundle(feat, hsh, grid_h, grid_w, fmt)
