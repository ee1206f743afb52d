"""Container round-trips, the frozen wire layout, and manifest validation."""

import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from funcorr.tensor_store import (
    BadMagicError,
    BadShapeError,
    ManifestError,
    TruncatedFileError,
    UnsupportedDtypeError,
    UnsupportedVersionError,
    load_manifest,
    read_tensor,
    write_tensor,
)


def test_wire_layout_is_frozen(tmp_path):
    # Independent byte-level construction of the documented layout: 12-byte
    # fixed header, u64 shape dims, raw little-endian data. Any header change
    # must fail here before it silently invalidates archived tensors.
    path = tmp_path / "t.dftc"
    write_tensor(np.array([[1, 2], [3, 4]], dtype=np.float32), path)
    expected = (
        b"DFTC"
        + struct.pack("<I", 1)          # version
        + struct.pack("<BB", 0, 2)      # dtype code f32, ndim
        + b"\x00\x00"                   # pad
        + struct.pack("<QQ", 2, 2)
        + np.array([1, 2, 3, 4], dtype="<f4").tobytes()
    )
    assert path.read_bytes() == expected
    assert len(expected) == 12 + 16 + 16


def test_zero_sized_dim_rejected(tmp_path):
    with pytest.raises(BadShapeError):
        write_tensor(np.zeros((0,), dtype=np.float32), tmp_path / "t.dftc")
    with pytest.raises(BadShapeError):
        write_tensor(np.float64(3.0), tmp_path / "t.dftc")  # 0-d


def test_large_f64_roundtrip_bitwise(tmp_path):
    rng = np.random.default_rng(0)
    a = rng.standard_normal(1_000_000)
    path = tmp_path / "big.dftc"
    write_tensor(a, path)
    b = read_tensor(path)
    assert b.dtype == np.float64 and b.shape == a.shape
    assert b.tobytes() == a.tobytes()


@settings(max_examples=60, deadline=None)
@given(
    code=st.sampled_from(["<f4", "<f8", "u1", "<i8"]),
    shape=st.lists(st.integers(min_value=1, max_value=5), min_size=1, max_size=4),
    content=st.integers(min_value=0, max_value=2**31 - 1),
)
def test_roundtrip_exact_all_dtypes(tmp_path_factory, code, shape, content):
    rng = np.random.default_rng(content)
    dtype = np.dtype(code)
    if dtype.kind == "f":
        a = rng.standard_normal(shape).astype(dtype)
    else:
        a = rng.integers(0, np.iinfo(dtype).max, size=shape).astype(dtype)
    path = tmp_path_factory.mktemp("rt") / "t.dftc"
    write_tensor(a, path)
    b = read_tensor(path)
    assert b.dtype == dtype and b.shape == tuple(shape)
    assert np.array_equal(a, b)


def test_unsupported_dtype_rejected(tmp_path):
    with pytest.raises(UnsupportedDtypeError):
        write_tensor(np.zeros(3, dtype=np.int32), tmp_path / "t.dftc")


def _valid_blob() -> bytearray:
    buf = bytearray()
    buf += b"DFTC" + struct.pack("<I", 1) + struct.pack("<BB", 1, 1) + b"\x00\x00"
    buf += struct.pack("<Q", 3)
    buf += np.arange(3, dtype="<f8").tobytes()
    return buf


@pytest.mark.parametrize(
    "mutate,err",
    [
        (lambda b: b"XXXX" + b[4:], BadMagicError),
        (lambda b: b[:4] + struct.pack("<I", 9) + b[8:], UnsupportedVersionError),
        (lambda b: b[:8] + bytes([77]) + b[9:], UnsupportedDtypeError),
        (lambda b: b[: len(b) - 5], TruncatedFileError),
        (lambda b: b[:10], TruncatedFileError),
        (lambda b: b + b"\x00", TruncatedFileError),
    ],
)
def test_each_corruption_gets_its_own_error(tmp_path, mutate, err):
    path = tmp_path / "bad.dftc"
    path.write_bytes(bytes(mutate(_valid_blob())))
    with pytest.raises(err):
        read_tensor(path)


def test_manifest_dangling_path_names_object(tmp_path, manifest, dataset_dir):
    doc = json.loads((dataset_dir / "manifest.json").read_text())
    doc["objects"][1]["views"][0]["depth"] = "tensors/nope.dftc"
    (tmp_path / "tensors").symlink_to(dataset_dir / "tensors")
    bad = tmp_path / "manifest.json"
    bad.write_text(json.dumps(doc))
    with pytest.raises(ManifestError, match=doc["objects"][1]["object_id"]):
        load_manifest(bad)


def test_manifest_alignment_must_share_function(tmp_path, dataset_dir):
    doc = json.loads((dataset_dir / "manifest.json").read_text())
    assert doc["alignments"], "fixture dataset should carry alignments"
    doc["alignments"][0]["function"] = "saw-with"
    bad = tmp_path / "manifest.json"
    bad.write_text(json.dumps(doc))
    with pytest.raises(ManifestError):
        load_manifest(bad, check_paths=False)
