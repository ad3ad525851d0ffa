"""Operation counts and calibrated latency estimates.

Counts are exact and match the instrumented kernels. Cycle numbers come from a
least-squares line through measured synthesis points; they are labelled
"calibrated, not measured" wherever they are reported.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

CALIBRATED_LABEL = "calibrated, not measured"

# Initiation interval (cycles) of the 8/16-bit sparse models versus n_max.
# Identical across the three datasets and both bit-widths.
TABLE1_II = ((8, 35), (12, 52), (16, 67), (20, 84))

# End-to-end latency (cycles) per dataset, bit-width and n_max.
TABLE1_LATENCY = {
    "mnist": {8: ((8, 79), (12, 104), (16, 124), (20, 146)), 16: ((8, 81), (12, 106), (16, 127), (20, 150))},
    "neutrino": {8: ((8, 69), (12, 90), (16, 111), (20, 133)), 16: ((8, 71), (12, 94), (16, 116), (20, 136))},
    "jet": {8: ((8, 75), (12, 97), (16, 119), (20, 140)), 16: ((8, 78), (12, 101), (16, 120), (20, 143))},
}
STANDARD_LATENCY = {"mnist": (3232, 3232), "neutrino": (9733, 9736), "jet": (8390, 8390)}


def tree_depth(h: int, w: int = 1) -> int:
    """Depth of the active-pixel reduction tree, ceil(log2(h*w))."""
    n = h * w
    if n < 1:
        raise ValueError("need at least one pixel")
    return (n - 1).bit_length()


@dataclass(frozen=True)
class ConvCost:
    sparse_mults: int
    dense_mults: int

    @property
    def ratio(self) -> Fraction:
        return Fraction(self.sparse_mults, self.dense_mults)


def conv_cost(n_max: int, c_in: int, c_out: int, h: int, w: int, k: int) -> ConvCost:
    if min(n_max, c_in, c_out, h, w, k) < 1:
        raise ValueError("all conv cost parameters must be positive")
    return ConvCost(n_max * n_max * c_in * c_out, h * w * c_in * c_out * k * k)


def act_cost(n_max: int, c: int, h: int, w: int) -> Fraction:
    if min(n_max, c, h, w) < 1:
        raise ValueError("all activation cost parameters must be positive")
    return Fraction(n_max * c, h * w * c)


def active_fraction(n_max: int, h: int, w: int) -> Fraction:
    return Fraction(n_max, h * w)


@dataclass(frozen=True)
class CycleCalibration:
    slope: float
    intercept: float
    residuals: tuple[float, ...]
    family: str = "input_reduce"

    def __post_init__(self):
        if self.slope < 0:
            raise ValueError(f"fitted slope {self.slope} is negative")


def calibrate_cycles(samples: Sequence[tuple[float, float]], family: str = "input_reduce") -> CycleCalibration:
    """Ordinary least-squares fit ``cycles ~ slope * n_max + intercept``."""
    if len(samples) < 2:
        raise ValueError("calibration needs at least two samples")
    x = np.array([s[0] for s in samples], dtype=np.float64)
    y = np.array([s[1] for s in samples], dtype=np.float64)
    if np.ptp(x) == 0:
        raise ValueError("calibration samples need at least two distinct n_max values")
    xm, ym = x.mean(), y.mean()
    slope = float(((x - xm) * (y - ym)).sum() / ((x - xm) ** 2).sum())
    intercept = float(ym - slope * xm)
    resid = tuple(float(v) for v in y - (slope * x + intercept))
    return CycleCalibration(slope, intercept, resid, family)


def estimate_cycles(cal: CycleCalibration, n_max: float) -> int:
    v = cal.slope * n_max + cal.intercept
    # round half away from zero; estimates are non-negative in practice
    return int(np.floor(abs(v) + 0.5) * np.sign(v))


def default_calibration() -> CycleCalibration:
    return calibrate_cycles(TABLE1_II, "input_reduce")


# -- per-model reports -----------------------------------------------------


@dataclass
class LayerCost:
    name: str
    mult_count: int = 0
    add_count: int = 0
    compare_count: int = 0
    dense_mult_count: int = 0
    tree_depth: int | None = None
    estimated_cycles: int | None = None


@dataclass
class CostReport:
    layers: list[LayerCost] = field(default_factory=list)

    @property
    def totals(self) -> dict[str, int]:
        keys = ("mult_count", "add_count", "compare_count", "dense_mult_count")
        return {k: sum(getattr(layer, k) for layer in self.layers) for k in keys}

    @property
    def mult_ratio(self) -> Fraction | None:
        t = self.totals
        if t["dense_mult_count"] == 0:
            return None
        return Fraction(t["mult_count"], t["dense_mult_count"])

    def to_dict(self) -> dict:
        ratio = self.mult_ratio
        return {
            "layers": [asdict(layer) for layer in self.layers],
            "totals": self.totals,
            "mult_ratio": None if ratio is None else [ratio.numerator, ratio.denominator],
            "cycle_estimates": CALIBRATED_LABEL,
        }


def model_cost(graph, cal: CycleCalibration | None = None) -> CostReport:
    """Per-layer operation counts for a :class:`~sparsecnn.model.ModelGraph`.

    ``dense_mult_count`` is what the equivalent standard layer would need.
    """
    from .model import Dense, DenseAct, InputReduce, SparseAct, SparseConv, SparseFlatten, SparsePool

    report = CostReport()
    h, w, c = graph.input_shape
    n = None
    flat = None
    for idx, layer in enumerate(graph.layers):
        name = f"{idx}:{layer.kind}"
        if isinstance(layer, InputReduce):
            n = layer.n_max
            lc = LayerCost(name, compare_count=n * (h * w - 1), tree_depth=tree_depth(h, w))
            if cal is not None:
                lc.estimated_cycles = estimate_cycles(cal, n)
        elif isinstance(layer, SparseConv):
            kw = layer.kernel
            cc = conv_cost(n, kw.c_in, kw.c_out, h, w, kw.k)
            lc = LayerCost(
                name,
                mult_count=cc.sparse_mults,
                add_count=cc.sparse_mults + n * kw.c_out,
                compare_count=n * n * kw.c_out,
                dense_mult_count=cc.dense_mults,
            )
            c = kw.c_out
        elif isinstance(layer, SparseAct):
            lc = LayerCost(name, compare_count=n * c if layer.activation == "relu" else 0)
        elif isinstance(layer, SparsePool):
            p = layer.pool
            lc = LayerCost(name, mult_count=n * c, add_count=n * c, compare_count=n * n * c)
            h, w = -(-h // p), -(-w // p)
        elif isinstance(layer, SparseFlatten):
            lc = LayerCost(name)
            flat = h * w * c
        elif isinstance(layer, Dense):
            out_dim, in_dim = layer.weight.shape
            lc = LayerCost(name, mult_count=out_dim * in_dim, add_count=out_dim * in_dim,
                           dense_mult_count=out_dim * in_dim)
            flat = out_dim
        elif isinstance(layer, DenseAct):
            lc = LayerCost(name, compare_count=flat if layer.activation == "relu" else 0)
        else:  # pragma: no cover - model validation rejects other kinds
            raise TypeError(layer)
        report.layers.append(lc)
    return report
