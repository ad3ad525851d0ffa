import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import random_sparse_image
from sparsecnn.errors import (
    BadMagicError,
    DimensionOverflowError,
    FileFormatError,
    MalformedManifestError,
    NonFiniteValueError,
    TruncatedFileError,
    UnsupportedVersionError,
)
from sparsecnn.io import (
    bundle_from_text,
    bundle_to_text,
    manifest_from_text,
    manifest_to_text,
    read_bundle,
    read_manifest,
    read_tensor,
    read_tensor_csv,
    tensor_from_bytes,
    tensor_to_bytes,
    write_bundle,
    write_manifest,
    write_tensor,
)
from sparsecnn.model import gen_random_model
from sparsecnn.numerics import DenseTensor, FixedFormat
from sparsecnn.sparse_core import ReduceConfig, bundle_from_pixels, sparse_input_reduce


def f32_tensor(rng, h, w, c):
    return DenseTensor.from_array(rng.normal(size=(h, w, c)).astype(np.float32))


def test_tensor_layout():
    t = DenseTensor.from_array(np.array([[1.0, 2.0], [3.0, -0.5]]))
    buf = tensor_to_bytes(t)
    assert buf[:4] == b"SPXT"
    assert struct.unpack("<4I", buf[4:20]) == (1, 2, 2, 1)
    assert len(buf) - 20 == 16
    assert np.frombuffer(buf[20:], "<f4").tolist() == [1.0, 2.0, 3.0, -0.5]


def test_tensor_file_round_trip(tmp_path):
    t = f32_tensor(np.random.default_rng(0), 3, 4, 2)
    write_tensor(tmp_path / "t.bin", t)
    assert read_tensor(tmp_path / "t.bin") == t


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1), st.integers(1, 9), st.integers(1, 9), st.integers(1, 3))
def test_tensor_bytes_identity(seed, h, w, c):
    buf = tensor_to_bytes(f32_tensor(np.random.default_rng(seed), h, w, c))
    assert tensor_to_bytes(tensor_from_bytes(buf)) == buf


def _header(*dims, magic=b"SPXT", version=1):
    return struct.pack("<4s4I", magic, version, *dims)


@pytest.mark.parametrize(
    "buf,err",
    [
        (b"XXXX" + bytes(16), BadMagicError),
        (b"SP", BadMagicError),
        (b"SPXT\x01\x00", TruncatedFileError),
        (_header(2, 2, 1, version=2) + bytes(16), UnsupportedVersionError),
        (_header(2, 2, 1) + bytes(12), TruncatedFileError),
        (_header(2, 2, 1) + bytes(20), FileFormatError),
        (_header(0, 2, 1), FileFormatError),
        (_header(1 << 15, 1 << 15, 4), DimensionOverflowError),
        (_header(1, 1, 1) + struct.pack("<f", float("nan")), NonFiniteValueError),
        (_header(1, 1, 1) + struct.pack("<f", float("inf")), NonFiniteValueError),
    ],
)
def test_tensor_read_errors(buf, err):
    with pytest.raises(err):
        tensor_from_bytes(buf)


def test_tensor_write_rejects_values_overflowing_f32():
    with pytest.raises(NonFiniteValueError):
        tensor_to_bytes(DenseTensor.from_array(np.array([[1e300]])))


def test_csv_matches_binary(tmp_path):
    rng = np.random.default_rng(5)
    arr = rng.normal(size=(2, 3, 2))
    csv = tmp_path / "t.csv"
    csv.write_text("2,3,2\n" + "\n".join(",".join(repr(float(v)) for v in row) for row in arr.reshape(3, 4)) + "\n")
    write_tensor(tmp_path / "t.bin", DenseTensor.from_array(arr))
    assert read_tensor_csv(csv) == read_tensor(tmp_path / "t.bin")


@pytest.mark.parametrize("text,err", [("", TruncatedFileError), ("2,2,1\n1,2,3\n", TruncatedFileError), ("2,x,1\n", FileFormatError), ("1,1,1\nnan\n", NonFiniteValueError)])
def test_csv_errors(tmp_path, text, err):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(err):
        read_tensor_csv(p)


# -- bundles ---------------------------------------------------------------


def test_bundle_text_layout():
    b = bundle_from_pixels([(1, 2, [0.5, -1.0])], 2, 3, 4)
    assert bundle_to_text(b) == "2 2 3 4\n1 2 0.5 -1.0\n0 0 0 0\n"


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 25), st.integers(1, 3))
def test_bundle_round_trip(seed, n_max, c):
    rng = np.random.default_rng(seed)
    b = sparse_input_reduce(random_sparse_image(rng, 6, 7, c, 0.3), ReduceConfig(0.0, n_max))
    text = bundle_to_text(b)
    again = bundle_from_text(text)
    assert again == b
    assert bundle_to_text(again) == text


def test_bundle_file_round_trip(tmp_path):
    b = bundle_from_pixels([(3, 3, [0.1])], 3, 3, 3)
    write_bundle(tmp_path / "b.txt", b)
    assert read_bundle(tmp_path / "b.txt") == b


@pytest.mark.parametrize(
    "text,err",
    [
        ("", TruncatedFileError),
        ("2 1 3\n", FileFormatError),
        ("2 1 3 3\n1 1 0.5\n", TruncatedFileError),
        ("1 1 3 3\n1 1 0.5\n2 2 0.1\n", FileFormatError),
        ("1 1 3 3\n1 1\n", FileFormatError),
        ("1 1 3 3\n4 1 0.5\n", FileFormatError),
        ("1 1 3 3\n0 0 0.5\n", FileFormatError),
        ("1 1 3 3\n1 1 nan\n", NonFiniteValueError),
        ("0 1 3 3\n", FileFormatError),
    ],
)
def test_bundle_read_errors(text, err):
    with pytest.raises(err):
        bundle_from_text(text)


# -- manifests -------------------------------------------------------------


@pytest.mark.parametrize("mode", ["float", "fixed"])
def test_manifest_text_round_trip(tmp_path, mode):
    m = gen_random_model(3, "jet", mode=mode, fmt=FixedFormat(8, 3))
    write_manifest(tmp_path / "m.json", m)
    text = (tmp_path / "m.json").read_text()
    again = read_manifest(tmp_path / "m.json")
    assert again == m
    assert manifest_to_text(again) == text
    assert json.loads(text)["version"] == 1


def test_manifest_rejects_bad_json_and_nan():
    with pytest.raises(MalformedManifestError):
        manifest_from_text("{not json")
    text = manifest_to_text(gen_random_model(0, "mnist")).replace('"threshold": 0.0', '"threshold": NaN')
    assert "NaN" in text
    with pytest.raises(MalformedManifestError):
        manifest_from_text(text)
