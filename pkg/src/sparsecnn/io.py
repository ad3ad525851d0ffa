"""On-disk formats: binary tensors, text bundles, JSON manifests.

Tensor file (little-endian)::

    offset 0   4 bytes   magic b"SPXT"
    offset 4   u32       version (1)
    offset 8   u32 x 3   H, W, C
    offset 20  f32 x H*W*C  row-major, channel-last payload

Bundle file (text)::

    n_max C grid_h grid_w
    h w f0 ... fC-1        # one line per slot, sentinels as "0 0 0 ... 0"
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    DimensionOverflowError,
    FileFormatError,
    MalformedManifestError,
    NonFiniteValueError,
    TruncatedFileError,
    UnsupportedVersionError,
)
from .model import ModelGraph, load_model, save_model
from .numerics import DenseTensor
from .sparse_core import SparseBundle

TENSOR_MAGIC = b"SPXT"
TENSOR_VERSION = 1
_HEADER = struct.Struct("<4s4I")
MAX_ELEMENTS = 1 << 28


# -- tensors ---------------------------------------------------------------


def tensor_to_bytes(t: DenseTensor) -> bytes:
    with np.errstate(over="ignore"):
        payload = t.data.astype("<f4")
    if not np.isfinite(payload).all():
        raise NonFiniteValueError("tensor contains values that are not finite in float32")
    return _HEADER.pack(TENSOR_MAGIC, TENSOR_VERSION, t.height, t.width, t.channels) + payload.tobytes()


def tensor_from_bytes(buf: bytes) -> DenseTensor:
    if len(buf) < 4 or buf[:4] != TENSOR_MAGIC:
        raise BadMagicError(f"bad magic {bytes(buf[:4])!r}, expected {TENSOR_MAGIC!r}")
    if len(buf) < _HEADER.size:
        raise TruncatedFileError("tensor header is truncated")
    _, version, h, w, c = _HEADER.unpack_from(buf)
    if version != TENSOR_VERSION:
        raise UnsupportedVersionError(f"tensor file version {version} is not supported")
    if min(h, w, c) < 1:
        raise FileFormatError(f"tensor dimensions must be positive, got {h}x{w}x{c}")
    n = h * w * c
    if n > MAX_ELEMENTS:
        raise DimensionOverflowError(f"{h}x{w}x{c} exceeds {MAX_ELEMENTS} elements")
    expected = _HEADER.size + 4 * n
    if len(buf) < expected:
        raise TruncatedFileError(f"payload has {len(buf) - _HEADER.size} bytes, expected {4 * n}")
    if len(buf) > expected:
        raise FileFormatError(f"{len(buf) - expected} trailing bytes after payload")
    data = np.frombuffer(buf, dtype="<f4", count=n, offset=_HEADER.size)
    if not np.isfinite(data).all():
        raise NonFiniteValueError("tensor payload contains NaN or infinity")
    return DenseTensor(h, w, c, data.astype(np.float64))


def write_tensor(path, t: DenseTensor) -> None:
    Path(path).write_bytes(tensor_to_bytes(t))


def read_tensor(path) -> DenseTensor:
    return tensor_from_bytes(Path(path).read_bytes())


def read_tensor_csv(path) -> DenseTensor:
    """CSV import: first line ``H,W,C``, then H*W*C values in file order."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise TruncatedFileError("empty CSV tensor")
    try:
        h, w, c = (int(v) for v in lines[0].split(","))
        values = [float(v) for ln in lines[1:] for v in ln.split(",") if v.strip()]
    except ValueError as e:
        raise FileFormatError(f"malformed CSV tensor: {e}") from None
    if h * w * c > MAX_ELEMENTS:
        raise DimensionOverflowError(f"{h}x{w}x{c} exceeds {MAX_ELEMENTS} elements")
    if len(values) != h * w * c:
        raise TruncatedFileError(f"CSV has {len(values)} values, expected {h * w * c}")
    data = np.array(values)
    if not np.isfinite(data).all():
        raise NonFiniteValueError("CSV contains NaN or infinity")
    # same precision as the binary format
    return DenseTensor(h, w, c, data.astype(np.float32).astype(np.float64))


# -- bundles ---------------------------------------------------------------


def bundle_to_text(b: SparseBundle) -> str:
    lines = [f"{b.n_max} {b.channels} {b.grid_h} {b.grid_w}"]
    valid = b.valid
    for i in range(b.n_max):
        if valid[i]:
            h, w = (int(v) for v in b.hash[i])
            lines.append(f"{h} {w} " + " ".join(repr(float(f)) for f in b.feat[i]))
        else:
            lines.append(" ".join(["0"] * (b.channels + 2)))
    return "\n".join(lines) + "\n"


def bundle_from_text(text: str) -> SparseBundle:
    lines = text.splitlines()
    if not lines:
        raise TruncatedFileError("empty bundle file")
    try:
        n_max, c, gh, gw = (int(v) for v in lines[0].split())
    except ValueError:
        raise FileFormatError(f"bad bundle header {lines[0]!r}") from None
    if min(n_max, c, gh, gw) < 1:
        raise FileFormatError("bundle header values must be positive")
    if n_max * c > MAX_ELEMENTS:
        raise DimensionOverflowError("bundle too large")
    body = lines[1:]
    if len(body) < n_max:
        raise TruncatedFileError(f"bundle has {len(body)} slot lines, expected {n_max}")
    if len(body) > n_max and any(ln.strip() for ln in body[n_max:]):
        raise FileFormatError("extra lines after the last slot")
    feat = np.zeros((n_max, c))
    hsh = np.zeros((n_max, 2), dtype=np.int64)
    for i, ln in enumerate(body[:n_max]):
        parts = ln.split()
        if len(parts) != c + 2:
            raise FileFormatError(f"slot {i}: expected {c + 2} fields, got {len(parts)}")
        try:
            hsh[i] = (int(parts[0]), int(parts[1]))
            feat[i] = [float(v) for v in parts[2:]]
        except ValueError as e:
            raise FileFormatError(f"slot {i}: {e}") from None
    if not np.isfinite(feat).all():
        raise NonFiniteValueError("bundle contains NaN or infinity")
    try:
        return SparseBundle(feat, hsh, gh, gw)
    except ValueError as e:
        raise FileFormatError(str(e)) from None


def write_bundle(path, b: SparseBundle) -> None:
    Path(path).write_text(bundle_to_text(b))


def read_bundle(path) -> SparseBundle:
    return bundle_from_text(Path(path).read_text())


# -- manifests -------------------------------------------------------------


def manifest_to_text(m: ModelGraph) -> str:
    return json.dumps(save_model(m), indent=1) + "\n"


def manifest_from_text(text: str) -> ModelGraph:
    try:
        data = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as e:
        raise MalformedManifestError(f"not valid JSON: {e}") from None
    return load_model(data)


def _reject_constant(name):
    raise MalformedManifestError(f"non-finite number {name} in manifest")


def write_manifest(path, m: ModelGraph) -> None:
    Path(path).write_text(manifest_to_text(m))


def read_manifest(path) -> ModelGraph:
    return manifest_from_text(Path(path).read_text())
