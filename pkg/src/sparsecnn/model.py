"""Sequential sparse-CNN graphs and the three ways to run them.

* :func:`run_sparse` threads a :class:`SparseBundle` through the sparse layers.
* :func:`run_dense_constrained` recomputes the same thing on full grids with
  the retained active set masked in, and is the oracle for the sparse path.
* :func:`run_dense` ignores the input reduction and runs a standard CNN with
  the same weights, for comparison only.

Manifests are plain dicts (JSON-compatible); see ``docs/formats.md``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import ClassVar, Union

import numpy as np

from .counters import OpCounter
from .dense_ref import (
    activation_dense,
    active_mask,
    avg_pool2d,
    conv2d_same,
    flatten,
    fully_connected,
    mask_tensor,
    masked_conv_oracle,
    naive_active_scan,
)
from .errors import (
    MalformedManifestError,
    ManifestDimensionError,
    ShapeError,
    UnknownLayerError,
)
from .numerics import DenseTensor, FixedFormat, quantize_tensor
from .sparse_core import (
    ACTIVATIONS,
    KernelWeights,
    ReduceConfig,
    apply_activation,
    pooled_coord,
    sparse_activation,
    sparse_avg_pool,
    sparse_conv,
    sparse_flatten,
    sparse_input_reduce,
)

MANIFEST_VERSION = 1
MODES = ("float", "fixed")
N_MAX_PRESETS = {"tiny": 8, "small": 12, "medium": 16, "large": 20}


@dataclass(frozen=True)
class InputReduce:
    kind: ClassVar[str] = "input_reduce"
    threshold: float
    n_max: int
    fmt: FixedFormat | None = None

    def __post_init__(self):
        ReduceConfig(self.threshold, self.n_max)


@dataclass(frozen=True)
class SparseConv:
    kind: ClassVar[str] = "sparse_conv"
    kernel: KernelWeights
    fmt: FixedFormat | None = None


@dataclass(frozen=True)
class SparseAct:
    kind: ClassVar[str] = "sparse_act"
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class SparsePool:
    kind: ClassVar[str] = "sparse_pool"
    pool: int
    fmt: FixedFormat | None = None

    def __post_init__(self):
        if self.pool < 1:
            raise ValueError("pool size must be >= 1")


@dataclass(frozen=True)
class SparseFlatten:
    kind: ClassVar[str] = "sparse_flatten"


@dataclass(frozen=True, eq=False)
class Dense:
    kind: ClassVar[str] = "dense"
    weight: np.ndarray = field(repr=False)
    bias: np.ndarray = field(repr=False)
    fmt: FixedFormat | None = None

    def __post_init__(self):
        w = np.array(self.weight, dtype=np.float64)
        b = np.array(self.bias, dtype=np.float64).reshape(-1)
        if w.ndim != 2 or w.shape[0] != b.size:
            raise ShapeError(f"dense weight {w.shape} does not match bias {b.shape}")
        w.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    def __eq__(self, other):
        if not isinstance(other, Dense):
            return NotImplemented
        return (
            self.fmt == other.fmt
            and np.array_equal(self.weight, other.weight)
            and np.array_equal(self.bias, other.bias)
        )


@dataclass(frozen=True)
class DenseAct:
    kind: ClassVar[str] = "dense_act"
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


LayerSpec = Union[InputReduce, SparseConv, SparseAct, SparsePool, SparseFlatten, Dense, DenseAct]
LAYER_KINDS = {cls.kind: cls for cls in (InputReduce, SparseConv, SparseAct, SparsePool, SparseFlatten, Dense, DenseAct)}


@dataclass(frozen=True)
class ModelGraph:
    input_shape: tuple[int, int, int]
    layers: tuple
    mode: str = "float"
    fmt: FixedFormat = FixedFormat(16, 6)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        self.shapes()

    @property
    def fixed(self) -> bool:
        return self.mode == "fixed"

    def layer_fmt(self, layer) -> FixedFormat | None:
        if not self.fixed:
            return None
        return getattr(layer, "fmt", None) or self.fmt

    @property
    def n_max(self) -> int:
        return self.layers[0].n_max

    def with_mode(self, mode: str, fmt: FixedFormat | None = None) -> "ModelGraph":
        return replace(self, mode=mode, fmt=fmt or self.fmt)

    def with_n_max(self, n_max: int) -> "ModelGraph":
        first = replace(self.layers[0], n_max=n_max)
        return replace(self, layers=(first,) + self.layers[1:])

    def shapes(self) -> list:
        """Output shape after each layer; raises :class:`ShapeError` on mismatch.

        Grid layers report (H, W, C); flat layers report (length,).
        """
        h, w, c = self.input_shape
        if min(h, w, c) < 1:
            raise ShapeError(f"bad input shape {self.input_shape}")
        if not self.layers or not isinstance(self.layers[0], InputReduce):
            raise ShapeError("a sparse model must start with input_reduce")
        out = []
        flat = None
        for i, layer in enumerate(self.layers):
            where = f"layer {i} ({layer.kind})"
            grid_kinds = (InputReduce, SparseConv, SparseAct, SparsePool, SparseFlatten)
            if isinstance(layer, grid_kinds) and flat is not None:
                raise ShapeError(f"{where}: sparse layer after flatten")
            if isinstance(layer, InputReduce) and i != 0:
                raise ShapeError(f"{where}: input_reduce must appear exactly once, first")
            if isinstance(layer, SparseConv):
                if layer.kernel.c_in != c:
                    raise ShapeError(f"{where}: expects {layer.kernel.c_in} channels, gets {c}")
                c = layer.kernel.c_out
            elif isinstance(layer, SparsePool):
                h, w = -(-h // layer.pool), -(-w // layer.pool)
            elif isinstance(layer, SparseFlatten):
                flat = h * w * c
            elif isinstance(layer, (Dense, DenseAct)) and flat is None:
                raise ShapeError(f"{where}: dense layers must follow sparse_flatten")
            if isinstance(layer, Dense):
                if layer.weight.shape[1] != flat:
                    raise ShapeError(f"{where}: expects input length {layer.weight.shape[1]}, gets {flat}")
                flat = layer.weight.shape[0]
            out.append((flat,) if flat is not None else (h, w, c))
        if flat is None:
            raise ShapeError("model never flattens")
        return out

    @property
    def output_dim(self) -> int:
        return self.shapes()[-1][0]

    def n_params(self) -> int:
        total = 0
        for layer in self.layers:
            if isinstance(layer, SparseConv):
                total += layer.kernel.w.size + layer.kernel.b.size
            elif isinstance(layer, Dense):
                total += layer.weight.size + layer.bias.size
        return total


def _check_input(m: ModelGraph, x: DenseTensor) -> DenseTensor:
    if x.shape != m.input_shape:
        raise ShapeError(f"input shape {x.shape} does not match model input {m.input_shape}")
    if m.fixed:
        return quantize_tensor(x, m.layer_fmt(m.layers[0]))
    return DenseTensor(*x.shape, x.data)


def _run_head(m: ModelGraph, layer, v: np.ndarray, v_fmt, counter):
    if isinstance(layer, Dense):
        fmt = m.layer_fmt(layer)
        return fully_connected(v, layer.weight, layer.bias, fmt, v_fmt, counter), fmt
    return apply_activation(v, layer.activation), v_fmt


def run_sparse(m: ModelGraph, x: DenseTensor, counter: OpCounter | None = None, trace: list | None = None) -> np.ndarray:
    """Logits from the sparse pipeline. ``trace`` collects each layer's output."""
    x = _check_input(m, x)
    bundle = None
    v, v_fmt = None, None
    for layer in m.layers:
        if isinstance(layer, InputReduce):
            bundle = sparse_input_reduce(x, ReduceConfig(layer.threshold, layer.n_max), counter)
        elif isinstance(layer, SparseConv):
            bundle = sparse_conv(bundle, layer.kernel, m.layer_fmt(layer), counter)
        elif isinstance(layer, SparseAct):
            bundle = sparse_activation(bundle, layer.activation, counter)
        elif isinstance(layer, SparsePool):
            bundle = sparse_avg_pool(bundle, layer.pool, m.layer_fmt(layer), counter)
        elif isinstance(layer, SparseFlatten):
            v, v_fmt = sparse_flatten(bundle), bundle.fmt
        else:
            v, v_fmt = _run_head(m, layer, v, v_fmt, counter)
        if trace is not None:
            trace.append(bundle if v is None else v)
    return v


def run_dense_constrained(m: ModelGraph, x: DenseTensor, counter: OpCounter | None = None) -> np.ndarray:
    """Logits from full-grid layers restricted to the retained active set."""
    x = _check_input(m, x)
    cur = x
    active: set[tuple[int, int]] = set()
    v, v_fmt = None, None
    for layer in m.layers:
        if isinstance(layer, InputReduce):
            coords, _ = naive_active_scan(x, layer.threshold, layer.n_max)
            active = set(coords)
            cur = mask_tensor(x, active_mask((x.height, x.width), active))
        elif isinstance(layer, SparseConv):
            cur = masked_conv_oracle(cur, active, layer.kernel, m.layer_fmt(layer), counter)
        elif isinstance(layer, SparseAct):
            cur = mask_tensor(activation_dense(cur, layer.activation), active_mask(cur.shape[:2], active))
        elif isinstance(layer, SparsePool):
            p = layer.pool
            cur = avg_pool2d(cur, p, m.layer_fmt(layer))
            active = {(pooled_coord(h, p), pooled_coord(w, p)) for h, w in active}
            cur = mask_tensor(cur, active_mask(cur.shape[:2], active))
        elif isinstance(layer, SparseFlatten):
            v, v_fmt = flatten(cur), cur.fmt
        else:
            v, v_fmt = _run_head(m, layer, v, v_fmt, counter)
    return v


def run_dense(m: ModelGraph, x: DenseTensor, counter: OpCounter | None = None) -> np.ndarray:
    """Standard (unconstrained) CNN forward pass with the same weights."""
    x = _check_input(m, x)
    cur = x
    v, v_fmt = None, None
    for layer in m.layers:
        if isinstance(layer, InputReduce):
            continue
        if isinstance(layer, SparseConv):
            cur = conv2d_same(cur, layer.kernel, m.layer_fmt(layer), counter)
        elif isinstance(layer, SparseAct):
            cur = activation_dense(cur, layer.activation)
        elif isinstance(layer, SparsePool):
            cur = avg_pool2d(cur, layer.pool, m.layer_fmt(layer))
        elif isinstance(layer, SparseFlatten):
            v, v_fmt = flatten(cur), cur.fmt
        else:
            v, v_fmt = _run_head(m, layer, v, v_fmt, counter)
    return v


# -- manifests -------------------------------------------------------------


def _fmt_to_dict(fmt: FixedFormat) -> dict:
    return {"total": fmt.total_bits, "integer": fmt.integer_bits}


def save_model(m: ModelGraph) -> dict:
    layers = []
    for layer in m.layers:
        d: dict = {"kind": layer.kind}
        if isinstance(layer, InputReduce):
            d.update(threshold=float(layer.threshold), n_max=layer.n_max)
        elif isinstance(layer, SparseConv):
            kw = layer.kernel
            d.update(
                k=kw.k,
                c_in=kw.c_in,
                c_out=kw.c_out,
                weights=kw.w.reshape(kw.k * kw.k, kw.c_out, kw.c_in).tolist(),
                bias=kw.b.tolist(),
            )
        elif isinstance(layer, (SparseAct, DenseAct)):
            d.update(activation=layer.activation)
        elif isinstance(layer, SparsePool):
            d.update(pool=layer.pool)
        elif isinstance(layer, Dense):
            d.update(
                in_dim=layer.weight.shape[1],
                out_dim=layer.weight.shape[0],
                weights=layer.weight.tolist(),
                bias=layer.bias.tolist(),
            )
        if getattr(layer, "fmt", None) is not None:
            d["format"] = _fmt_to_dict(layer.fmt)
        layers.append(d)
    return {
        "version": MANIFEST_VERSION,
        "input": list(m.input_shape),
        "mode": m.mode,
        "format": _fmt_to_dict(m.fmt),
        "layers": layers,
    }


_LAYER_KEYS = {
    "input_reduce": {"threshold", "n_max"},
    "sparse_conv": {"k", "c_in", "c_out", "weights", "bias"},
    "sparse_act": {"activation"},
    "sparse_pool": {"pool"},
    "sparse_flatten": set(),
    "dense": {"in_dim", "out_dim", "weights", "bias"},
    "dense_act": {"activation"},
}
_FMT_LAYERS = {"input_reduce", "sparse_conv", "sparse_pool", "dense"}


def _require(d: dict, key: str, where: str):
    if key not in d:
        raise MalformedManifestError(f"{where}: missing field {key!r}")
    return d[key]


def _int(v, where: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise MalformedManifestError(f"{where}: expected an integer, got {v!r}")
    return v


def _real(v, where: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise MalformedManifestError(f"{where}: expected a finite number, got {v!r}")
    return float(v)


def _array(v, shape: tuple, where: str) -> np.ndarray:
    def walk(node, depth):
        if depth == len(shape):
            return _real(node, where)
        if not isinstance(node, list):
            raise MalformedManifestError(f"{where}: expected nested lists of depth {len(shape)}")
        if len(node) != shape[depth]:
            raise ManifestDimensionError(
                f"{where}: expected length {shape[depth]} at depth {depth}, got {len(node)}"
            )
        return [walk(child, depth + 1) for child in node]

    return np.array(walk(v, 0), dtype=np.float64).reshape(shape)


def _parse_fmt(d, where: str) -> FixedFormat:
    if not isinstance(d, dict) or set(d) != {"total", "integer"}:
        raise MalformedManifestError(f"{where}: format must be {{total, integer}}")
    try:
        return FixedFormat(_int(d["total"], where), _int(d["integer"], where))
    except ValueError as e:
        if isinstance(e, MalformedManifestError):
            raise
        raise MalformedManifestError(f"{where}: {e}") from None


def load_model(manifest: dict) -> ModelGraph:
    """Build a validated :class:`ModelGraph` from a manifest dict.

    Missing fields, unknown layer kinds and inconsistent dimensions raise
    distinct :class:`~sparsecnn.errors.ManifestError` subclasses.
    """
    if not isinstance(manifest, dict):
        raise MalformedManifestError("manifest must be an object")
    top = {"version", "input", "mode", "format", "layers"}
    extra = set(manifest) - top
    if extra:
        raise MalformedManifestError(f"unknown top-level fields {sorted(extra)}")
    version = _int(_require(manifest, "version", "manifest"), "version")
    if version != MANIFEST_VERSION:
        raise MalformedManifestError(f"unsupported manifest version {version}")
    shape = _require(manifest, "input", "manifest")
    if not isinstance(shape, list) or len(shape) != 3:
        raise MalformedManifestError("input must be [H, W, C]")
    shape = tuple(_int(v, "input") for v in shape)
    mode = _require(manifest, "mode", "manifest")
    if mode not in MODES:
        raise MalformedManifestError(f"mode must be one of {MODES}, got {mode!r}")
    fmt = _parse_fmt(_require(manifest, "format", "manifest"), "format")
    raw_layers = _require(manifest, "layers", "manifest")
    if not isinstance(raw_layers, list):
        raise MalformedManifestError("layers must be a list")

    layers = []
    for i, d in enumerate(raw_layers):
        where = f"layer {i}"
        if not isinstance(d, dict):
            raise MalformedManifestError(f"{where}: must be an object")
        kind = _require(d, "kind", where)
        if kind not in _LAYER_KEYS:
            raise UnknownLayerError(f"{where}: unknown layer kind {kind!r}")
        allowed = _LAYER_KEYS[kind] | {"kind"} | ({"format"} if kind in _FMT_LAYERS else set())
        extra = set(d) - allowed
        if extra:
            raise MalformedManifestError(f"{where}: unknown fields {sorted(extra)}")
        for key in _LAYER_KEYS[kind]:
            _require(d, key, where)
        lfmt = _parse_fmt(d["format"], where) if "format" in d else None
        try:
            layers.append(_parse_layer(kind, d, lfmt, where))
        except (MalformedManifestError, ManifestDimensionError):
            raise
        except ShapeError as e:
            raise ManifestDimensionError(f"{where}: {e}") from None
        except ValueError as e:
            raise MalformedManifestError(f"{where}: {e}") from None
    try:
        return ModelGraph(shape, tuple(layers), mode, fmt)
    except ShapeError as e:
        raise ManifestDimensionError(str(e)) from None
    except ValueError as e:
        raise MalformedManifestError(str(e)) from None


def _parse_layer(kind: str, d: dict, lfmt, where: str):
    if kind == "input_reduce":
        return InputReduce(_real(d["threshold"], where), _int(d["n_max"], where), lfmt)
    if kind == "sparse_conv":
        k, c_in, c_out = (_int(d[key], where) for key in ("k", "c_in", "c_out"))
        if k < 1 or c_in < 1 or c_out < 1:
            raise MalformedManifestError(f"{where}: k, c_in and c_out must be positive")
        w = _array(d["weights"], (k * k, c_out, c_in), f"{where} weights")
        b = _array(d["bias"], (c_out,), f"{where} bias")
        return SparseConv(KernelWeights(k, c_in, c_out, w.reshape(-1), b), lfmt)
    if kind == "sparse_act":
        return SparseAct(d["activation"])
    if kind == "sparse_pool":
        return SparsePool(_int(d["pool"], where), lfmt)
    if kind == "sparse_flatten":
        return SparseFlatten()
    if kind == "dense":
        in_dim, out_dim = _int(d["in_dim"], where), _int(d["out_dim"], where)
        w = _array(d["weights"], (out_dim, in_dim), f"{where} weights")
        b = _array(d["bias"], (out_dim,), f"{where} bias")
        return Dense(w, b, lfmt)
    return DenseAct(d["activation"])


# -- presets ---------------------------------------------------------------


@dataclass(frozen=True)
class Preset:
    input_shape: tuple[int, int, int]
    pools: tuple[int, int]
    hidden: int
    classes: int


# Channel counts and widths are best-effort choices giving ~4k parameters
PRESETS = {
    "mnist": Preset((48, 48, 1), (4, 2), 48, 10),
    "neutrino": Preset((63, 63, 1), (3, 3), 40, 2),
    "jet": Preset((56, 56, 1), (4, 2), 40, 5),
}


def gen_random_model(
    seed: int,
    preset: str,
    *,
    channels: tuple[int, int] = (2, 2),
    hidden: int | None = None,
    n_max: int = 20,
    kernel: int = 3,
    threshold: float = 0.0,
    mode: str = "float",
    fmt: FixedFormat = FixedFormat(16, 6),
) -> ModelGraph:
    """Two conv+ReLU+avg-pool blocks and a two-layer MLP with uniform[-0.5, 0.5] weights."""
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    p = PRESETS[preset]
    hidden = p.hidden if hidden is None else hidden
    rng = np.random.default_rng(seed)

    def u(*shape):
        return rng.uniform(-0.5, 0.5, size=shape)

    h, w, c = p.input_shape
    layers: list = [InputReduce(threshold, n_max)]
    for c_out, pool in zip(channels, p.pools):
        layers.append(SparseConv(KernelWeights(kernel, c, c_out, u(kernel * kernel * c * c_out), u(c_out))))
        layers.append(SparseAct("relu"))
        layers.append(SparsePool(pool))
        c = c_out
        h, w = -(-h // pool), -(-w // pool)
    layers.append(SparseFlatten())
    flat = h * w * c
    layers += [Dense(u(hidden, flat), u(hidden)), DenseAct("relu"), Dense(u(p.classes, hidden), u(p.classes))]
    return ModelGraph(p.input_shape, tuple(layers), mode, fmt)
