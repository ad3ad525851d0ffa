"""Sparsification transforms for building sparse inputs from dense images.

A transform spec is an ordered list of steps, written on the command line as
``"avg_pool:3,pad_to:48x48,radial_inflate:1.6,threshold:0.4"`` or in a text
file with one step per line (``#`` starts a comment).
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ShapeError
from .numerics import DenseTensor

STEP_KINDS = (
    "avg_pool",
    "sum_pool",
    "pad_to",
    "crop_borders",
    "radial_inflate",
    "threshold",
    "normalize",
    "saturate",
)
_DIM_STEPS = {"pad_to", "crop_borders"}
_INT_STEPS = {"avg_pool", "sum_pool"}


@dataclass(frozen=True)
class Step:
    kind: str
    arg: float | int | tuple[int, int]

    def __post_init__(self):
        if self.kind not in STEP_KINDS:
            raise ValueError(f"unknown transform {self.kind!r}; expected one of {STEP_KINDS}")
        if self.kind in _INT_STEPS and (not isinstance(self.arg, int) or self.arg < 1):
            raise ValueError(f"{self.kind} needs a positive integer, got {self.arg!r}")
        if self.kind == "radial_inflate" and self.arg < 1:
            raise ValueError("inflation scale must be >= 1")
        if self.kind == "normalize" and self.arg == 0:
            raise ValueError("normalize factor must be nonzero")

    def __str__(self) -> str:
        if self.kind in _DIM_STEPS:
            return f"{self.kind}:{self.arg[0]}x{self.arg[1]}"
        return f"{self.kind}:{self.arg}"


def parse_step(text: str) -> Step:
    kind, sep, arg = text.strip().partition(":")
    if not sep:
        raise ValueError(f"transform step {text!r} must look like kind:argument")
    kind = kind.strip()
    arg = arg.strip()
    try:
        if kind in _DIM_STEPS:
            h, w = arg.lower().split("x")
            return Step(kind, (int(h), int(w)))
        if kind in _INT_STEPS:
            return Step(kind, int(arg))
        return Step(kind, float(arg))
    except ValueError as e:
        raise ValueError(f"bad transform step {text!r}: {e}") from None


def parse_spec(text: str) -> list[Step]:
    """Parse a comma-separated step list. The empty string is the identity."""
    return [parse_step(part) for part in text.split(",") if part.strip()]


def load_spec(path: str | Path) -> list[Step]:
    steps = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            steps.extend(parse_spec(line))
    return steps


def format_spec(steps: Sequence[Step]) -> str:
    return ",".join(str(s) for s in steps)


def _pool(arr: np.ndarray, p: int, reduce) -> np.ndarray:
    # windows that do not fit are dropped, like a 'valid' pooling layer
    h, w, c = arr.shape
    oh, ow = h // p, w // p
    if oh == 0 or ow == 0:
        raise ShapeError(f"pool size {p} larger than image {h}x{w}")
    return reduce(arr[: oh * p, : ow * p].reshape(oh, p, ow, p, c), axis=(1, 3))


def pad_to(arr: np.ndarray, h2: int, w2: int) -> np.ndarray:
    h, w, c = arr.shape
    if h2 < h or w2 < w:
        raise ShapeError(f"cannot pad {h}x{w} down to {h2}x{w2}")
    top, left = (h2 - h) // 2, (w2 - w) // 2
    out = np.zeros((h2, w2, c))
    out[top : top + h, left : left + w] = arr
    return out


def crop_borders(arr: np.ndarray, h2: int, w2: int) -> np.ndarray:
    h, w, _ = arr.shape
    if h2 > h or w2 > w or h2 < 1 or w2 < 1:
        raise ShapeError(f"cannot crop {h}x{w} to {h2}x{w2}")
    top, left = (h - h2) // 2, (w - w2) // 2
    return arr[top : top + h2, left : left + w2].copy()


def _inflate_axis(p: np.ndarray, centre: float, s: float) -> np.ndarray:
    d = s * (p - centre)
    mag = np.abs(d)
    if centre % 1 == 0:
        off = np.floor(mag + 0.5)
    else:
        # half-pixel centre: targets sit at half-odd offsets
        off = np.floor(mag) + 0.5
    return np.rint(centre + np.sign(d) * off).astype(np.int64)


def radial_inflate(x: DenseTensor, s: float) -> DenseTensor:
    """Push every nonzero pixel away from the image centre by factor ``s``.

    Pixel p lands on ``centre + s * (p - centre)`` rounded half away from the
    centre. Targets outside the grid are dropped and collisions keep the
    largest value.
    """
    if x.channels != 1:
        raise ShapeError("radial_inflate needs a single-channel image")
    if s < 1:
        raise ValueError("inflation scale must be >= 1")
    img = x.array[:, :, 0]
    h, w = img.shape
    ch, cw = (h - 1) / 2, (w - 1) / 2
    rows, cols = np.nonzero(img)
    vals = img[rows, cols]
    nr = _inflate_axis(rows, ch, s)
    nc = _inflate_axis(cols, cw, s)
    keep = (nr >= 0) & (nr < h) & (nc >= 0) & (nc < w)
    out = np.zeros((h, w))
    filled = np.zeros((h, w), dtype=bool)
    for r, c, v in zip(nr[keep], nc[keep], vals[keep]):
        if not filled[r, c] or v > out[r, c]:
            out[r, c] = v
            filled[r, c] = True
    return DenseTensor.from_array(out)


def apply_step(x: DenseTensor, step: Step) -> DenseTensor:
    arr = x.array
    k, a = step.kind, step.arg
    if k == "avg_pool":
        out = _pool(arr, a, np.mean)
    elif k == "sum_pool":
        out = _pool(arr, a, np.sum)
    elif k == "pad_to":
        out = pad_to(arr, *a)
    elif k == "crop_borders":
        out = crop_borders(arr, *a)
    elif k == "radial_inflate":
        return radial_inflate(x, a)
    elif k == "threshold":
        out = np.where(arr >= a, arr, 0.0)
    elif k == "normalize":
        out = arr / a
    else:
        out = np.minimum(arr, a)
    return DenseTensor.from_array(out)


def apply_transforms(x: DenseTensor, spec: Sequence[Step]) -> DenseTensor:
    """Apply ``spec`` left to right; errors name the failing step index."""
    for i, step in enumerate(spec):
        try:
            x = apply_step(x, step)
        except ShapeError as e:
            raise ShapeError(f"step {i} ({step}): {e}") from None
    return x


def gen_synthetic_sparse(
    seed: int,
    h: int,
    w: int,
    n_active: int,
    value_range: tuple[float, float] = (0.1, 1.0),
    channels: int = 1,
) -> DenseTensor:
    """Image with exactly ``n_active`` distinct pixels whose channel 0 is > 0."""
    lo, hi = value_range
    if not 0 < lo <= hi:
        raise ValueError("value_range must satisfy 0 < lo <= hi")
    if not 0 <= n_active <= h * w:
        raise ValueError(f"n_active={n_active} does not fit a {h}x{w} grid")
    rng = np.random.default_rng(seed)
    out = np.zeros((h * w, channels))
    where = rng.choice(h * w, size=n_active, replace=False)
    out[where] = rng.uniform(lo, hi, size=(n_active, channels))
    return DenseTensor.from_array(out.reshape(h, w, channels))
