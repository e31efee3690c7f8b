import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochrom.container import (
    MAGIC,
    ContainerError,
    read_container,
    write_container,
)


def roundtrip(tmp_path, matrices, metadata=None):
    path = tmp_path / "artifact.somx"
    write_container(path, matrices, metadata)
    return read_container(path)


def test_roundtrip_basic(tmp_path):
    matrices = {
        "a": np.array([[1.0, 2.0], [3.0, 4.0]]),
        "b": np.arange(6.0).reshape(3, 2),
    }
    out, meta = roundtrip(tmp_path, matrices, {"k": "v"})
    assert list(out) == ["a", "b"]
    for name in matrices:
        assert out[name].tobytes() == matrices[name].tobytes()
    assert meta == {"k": "v"}


def test_roundtrip_negative_zero_and_extremes(tmp_path):
    tricky = np.array(
        [[-0.0, 0.0], [5e-324, -5e-324], [1.7976931348623157e308, -1.0]]
    )
    out, _ = roundtrip(tmp_path, {"t": tricky})
    assert out["t"].tobytes() == tricky.tobytes()
    # sign of zero preserved
    assert np.signbit(out["t"][0, 0])
    assert not np.signbit(out["t"][0, 1])


@settings(max_examples=50, deadline=None)
@given(
    st.lists(
        st.floats(allow_nan=False, allow_infinity=False, width=64),
        min_size=1,
        max_size=40,
    )
)
def test_roundtrip_all_finite_doubles(tmp_path_factory, values):
    path = tmp_path_factory.mktemp("hyp") / "x.somx"
    arr = np.array(values).reshape(-1, 1)
    write_container(path, {"m": arr})
    out, _ = read_container(path)
    assert out["m"].tobytes() == arr.tobytes()


def test_one_dimensional_stored_as_column(tmp_path):
    out, _ = roundtrip(tmp_path, {"v": np.array([1.0, 2.0, 3.0])})
    assert out["v"].shape == (3, 1)


def test_metadata_value_may_contain_equals(tmp_path):
    _, meta = roundtrip(tmp_path, {"m": np.eye(1)}, {"expr": "a=b=c"})
    assert meta["expr"] == "a=b=c"


def test_metadata_newline_rejected(tmp_path):
    with pytest.raises(ContainerError):
        write_container(tmp_path / "x.somx", {"m": np.eye(1)}, {"k": "a\nb"})


def test_empty_metadata(tmp_path):
    _, meta = roundtrip(tmp_path, {"m": np.eye(2)})
    assert meta == {}


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.somx"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(ContainerError, match="magic"):
        read_container(path)


def test_truncated_payload_rejected(tmp_path):
    path = tmp_path / "x.somx"
    write_container(path, {"m": np.eye(3)})
    blob = path.read_bytes()
    path.write_bytes(blob[:-10])
    with pytest.raises(ContainerError, match="truncated"):
        read_container(path)


def test_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "x.somx"
    write_container(path, {"m": np.eye(2)})
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(ContainerError, match="trailing"):
        read_container(path)


def test_unsupported_version_rejected(tmp_path):
    path = tmp_path / "x.somx"
    write_container(path, {"m": np.eye(2)})
    blob = bytearray(path.read_bytes())
    blob[4:8] = struct.pack("<I", 99)
    path.write_bytes(bytes(blob))
    with pytest.raises(ContainerError, match="version"):
        read_container(path)


def test_rewrite_is_bitwise_identical(tmp_path):
    matrices = {"m": np.random.default_rng(0).standard_normal((5, 7))}
    p1 = tmp_path / "a.somx"
    p2 = tmp_path / "b.somx"
    write_container(p1, matrices, {"seed": "1"})
    write_container(p2, matrices, {"seed": "1"})
    assert p1.read_bytes() == p2.read_bytes()
    assert p1.read_bytes()[:4] == MAGIC
