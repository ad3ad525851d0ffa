"""Fixed-point emulation and the dense tensor container.

Fixed-point values follow the usual HLS ``ap_fixed<total, integer>`` layout:
``integer_bits`` counts the sign bit, the remaining ``total - integer`` bits are
fractional. Rounding is round-to-nearest with ties away from zero, overflow
saturates. Accumulation is done on wide integers and rounded once, when a layer
writes its output.
"""
from __future__ import annotations

import math
from fractions import Fraction
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import AccumulatorOverflowError

# widest integer we let numpy handle natively; anything wider falls back to
# Python ints in object arrays
_INT64_SAFE_BITS = 61


@dataclass(frozen=True)
class FixedFormat:
    total_bits: int
    integer_bits: int

    def __post_init__(self):
        if not 2 <= self.total_bits <= 32:
            raise ValueError(f"total_bits must be in [2, 32], got {self.total_bits}")
        if not 1 <= self.integer_bits <= self.total_bits:
            raise ValueError(
                f"integer_bits must be in [1, {self.total_bits}], got {self.integer_bits}"
            )

    @property
    def frac_bits(self) -> int:
        return self.total_bits - self.integer_bits

    @property
    def step(self) -> float:
        return math.ldexp(1.0, -self.frac_bits)

    @property
    def min_raw(self) -> int:
        return -(1 << (self.total_bits - 1))

    @property
    def max_raw(self) -> int:
        return (1 << (self.total_bits - 1)) - 1

    @property
    def min_value(self) -> float:
        return math.ldexp(self.min_raw, -self.frac_bits)

    @property
    def max_value(self) -> float:
        return math.ldexp(self.max_raw, -self.frac_bits)

    def __str__(self) -> str:
        return f"{self.total_bits}:{self.integer_bits}"

    @classmethod
    def parse(cls, text: str) -> "FixedFormat":
        """Parse ``"total:integer"`` (the CLI ``--format`` syntax)."""
        try:
            total, integer = (int(p) for p in text.split(":"))
        except ValueError:
            raise ValueError(f"expected format 'total:integer', got {text!r}") from None
        return cls(total, integer)


# integer/fractional split is not given for the 8- and 16-bit models
DEFAULT_FORMATS = {8: FixedFormat(8, 3), 16: FixedFormat(16, 6)}


def default_format(total_bits: int) -> FixedFormat:
    try:
        return DEFAULT_FORMATS[total_bits]
    except KeyError:
        raise ValueError(f"no default split for {total_bits}-bit formats") from None


@dataclass(frozen=True)
class FixedValue:
    raw: int
    fmt: FixedFormat

    def __post_init__(self):
        if not self.fmt.min_raw <= self.raw <= self.fmt.max_raw:
            raise ValueError(f"raw value {self.raw} does not fit {self.fmt}")

    @property
    def value(self) -> float:
        return math.ldexp(self.raw, -self.fmt.frac_bits)


def quantize(x: float, fmt: FixedFormat) -> FixedValue:
    if math.isnan(x):
        raise ValueError("cannot quantize NaN")
    if math.isinf(x):
        return FixedValue(fmt.max_raw if x > 0 else fmt.min_raw, fmt)
    scaled = math.ldexp(abs(x), fmt.frac_bits)
    raw = math.floor(scaled + 0.5)
    if x < 0:
        raw = -raw
    return FixedValue(min(max(raw, fmt.min_raw), fmt.max_raw), fmt)


def dequantize(v: FixedValue) -> float:
    return v.value


def quantize_array(x, fmt: FixedFormat) -> np.ndarray:
    """Vectorised :func:`quantize`; returns raw integers as int64."""
    x = np.asarray(x, dtype=np.float64)
    if np.isnan(x).any():
        raise ValueError("cannot quantize NaN")
    scaled = np.ldexp(np.abs(x), fmt.frac_bits)
    # clip before the floor so huge inputs cannot overflow the int cast
    mag = np.floor(np.minimum(scaled, 2.0**40) + 0.5)
    raw = np.where(x < 0, -mag, mag)
    return np.clip(raw, fmt.min_raw, fmt.max_raw).astype(np.int64)


def from_raw(raw, fmt: FixedFormat) -> np.ndarray:
    return np.ldexp(np.asarray(raw, dtype=np.float64), -fmt.frac_bits)


def snap(x, fmt: FixedFormat) -> np.ndarray:
    """Round real values onto the format grid (quantize then dequantize)."""
    return from_raw(quantize_array(x, fmt), fmt)


def to_raw(x, fmt: FixedFormat) -> np.ndarray:
    """Exact conversion of values already on ``fmt``'s grid to raw integers."""
    scaled = np.ldexp(np.asarray(x, dtype=np.float64), fmt.frac_bits)
    raw = np.rint(scaled)
    if not np.array_equal(raw, scaled):
        raise ValueError(f"values are not on the {fmt} grid")
    return raw.astype(np.int64)


def int_dtype(bits: int):
    """int64 when ``bits`` fit comfortably, else Python ints (object)."""
    return np.int64 if bits <= _INT64_SAFE_BITS else object


def requantize(acc, acc_frac: int, fmt: FixedFormat, divisor: int = 1) -> np.ndarray:
    """Round ``acc / (divisor * 2**acc_frac)`` to raw units of ``fmt``.

    Integer-only: round half away from zero, then saturate.
    """
    acc = np.asarray(acc)
    f = fmt.frac_bits
    up = max(0, f - acc_frac)
    down = max(0, acc_frac - f)
    width = _max_bits(acc) + up + 2
    if width > _INT64_SAFE_BITS or acc.dtype == object:
        num = acc.astype(object) * (1 << up)
        den = divisor * (1 << down)
    else:
        num = acc.astype(np.int64) * (1 << up)
        den = np.int64(divisor * (1 << down))
    neg = num < 0
    mag = np.where(neg, -num, num)
    q = (2 * mag + den) // (2 * den)
    q = np.where(neg, -q, q)
    q = np.minimum(np.maximum(q, fmt.min_raw), fmt.max_raw)
    return np.asarray(q).astype(np.int64)


def _max_bits(a: np.ndarray) -> int:
    if a.size == 0:
        return 1
    m = max(abs(int(a.max())), abs(int(a.min())))
    return m.bit_length() + 1


def accumulator_width(fmt: FixedFormat, n_terms: int) -> int:
    """Minimum accumulator width for ``n_terms`` products of two ``fmt`` values."""
    return 2 * fmt.total_bits + math.ceil(math.log2(max(n_terms, 1))) + 1


@dataclass(frozen=True)
class Accumulator:
    """Wide two's-complement accumulator holding exact sums of products.

    ``raw`` is in units of ``2**-frac``.
    """

    frac: int
    width: int
    raw: int = 0

    def __post_init__(self):
        lim = 1 << (self.width - 1)
        if not -lim <= self.raw < lim:
            raise AccumulatorOverflowError(
                f"accumulator value {self.raw} exceeds {self.width} bits"
            )

    @classmethod
    def for_products(cls, a_fmt: FixedFormat, b_fmt: FixedFormat, n_terms: int) -> "Accumulator":
        width = a_fmt.total_bits + b_fmt.total_bits + math.ceil(math.log2(max(n_terms, 1))) + 1
        return cls(frac=a_fmt.frac_bits + b_fmt.frac_bits, width=width)

    @property
    def exact(self) -> Fraction:
        return Fraction(self.raw, 1 << self.frac)

    def add_fixed(self, v: FixedValue) -> "Accumulator":
        shift = self.frac - v.fmt.frac_bits
        if shift < 0:
            raise ValueError("addend has more fractional bits than the accumulator")
        return Accumulator(self.frac, self.width, self.raw + (v.raw << shift))

    def result(self, fmt: FixedFormat, divisor: int = 1) -> FixedValue:
        return FixedValue(int(requantize(np.array([self.raw], dtype=object), self.frac, fmt, divisor)[0]), fmt)


def fixed_mul_acc(acc: Accumulator, a: FixedValue, b: FixedValue) -> Accumulator:
    """Add the exact product ``a*b`` to ``acc`` (no rounding, no saturation)."""
    if a.fmt.frac_bits + b.fmt.frac_bits != acc.frac:
        raise ValueError("operand formats do not match the accumulator scale")
    return Accumulator(acc.frac, acc.width, acc.raw + a.raw * b.raw)


@dataclass(frozen=True)
class DenseTensor:
    """H x W x C image, row-major and channel-last, stored flat.

    ``fmt`` is set when every value is known to lie on that fixed-point grid.
    """

    height: int
    width: int
    channels: int
    data: np.ndarray = field(repr=False)
    fmt: FixedFormat | None = None

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64).reshape(-1)
        if min(self.height, self.width, self.channels) < 1:
            raise ValueError("tensor dimensions must be positive")
        if data.size != self.height * self.width * self.channels:
            raise ValueError(
                f"data length {data.size} != {self.height}*{self.width}*{self.channels}"
            )
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @classmethod
    def from_array(cls, arr, fmt: FixedFormat | None = None) -> "DenseTensor":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise ValueError(f"expected an HxW or HxWxC array, got shape {arr.shape}")
        return cls(arr.shape[0], arr.shape[1], arr.shape[2], arr.reshape(-1), fmt)

    @classmethod
    def zeros(cls, height: int, width: int, channels: int = 1) -> "DenseTensor":
        return cls(height, width, channels, np.zeros(height * width * channels))

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.height, self.width, self.channels)

    @property
    def array(self) -> np.ndarray:
        """Read-only (H, W, C) view of the data."""
        return self.data.reshape(self.shape)

    def index(self, i: int, j: int, c: int) -> int:
        if not (0 <= i < self.height and 0 <= j < self.width and 0 <= c < self.channels):
            raise IndexError(f"({i}, {j}, {c}) out of bounds for {self.shape}")
        return self.channels * (i * self.width + j) + c

    def __eq__(self, other):
        if not isinstance(other, DenseTensor):
            return NotImplemented
        return self.shape == other.shape and self.fmt == other.fmt and np.array_equal(self.data, other.data)

    __hash__ = None


def tensor_get(t: DenseTensor, i: int, j: int, c: int) -> float:
    return float(t.data[t.index(i, j, c)])


def tensor_set(t: DenseTensor, i: int, j: int, c: int, value: float) -> DenseTensor:
    """Return a copy of ``t`` with one slot replaced."""
    data = t.data.copy()
    data[t.index(i, j, c)] = value
    return DenseTensor(t.height, t.width, t.channels, data, t.fmt)


def quantize_tensor(t: DenseTensor, fmt: FixedFormat) -> DenseTensor:
    return DenseTensor(t.height, t.width, t.channels, snap(t.data, fmt), fmt)


def as_raw_sum_dtype(in_bits: Sequence[int], n_terms: int):
    """Integer dtype wide enough to sum ``n_terms`` products of the given widths."""
    bits = sum(in_bits) + math.ceil(math.log2(max(n_terms, 1))) + 1
    return int_dtype(bits)
