import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays, array_shapes

from motionkit import fmat
from motionkit.errors import ParseError, SchemaError


def test_header_layout():
    buf = fmat.encode(np.arange(6.0).reshape(2, 3))
    assert buf[:4] == b"FMAT"
    assert struct.unpack_from("<II", buf, 4) == (1, 2)
    assert struct.unpack_from("<QQ", buf, 12) == (2, 3)
    assert np.frombuffer(buf[28:], "<f8").tolist() == [0, 1, 2, 3, 4, 5]


@given(arrays(np.float64, array_shapes(min_dims=0, max_dims=4, min_side=0, max_side=5),
              elements=st.floats(allow_nan=False, allow_infinity=False)))
def test_round_trip(a):
    b = fmat.decode(fmat.encode(a))
    assert b.shape == a.shape and np.array_equal(a, b)


def test_file_round_trip(tmp_path):
    a = np.random.default_rng(0).normal(size=(3, 4, 5))
    fmat.write(tmp_path / "a.fmat", a)
    assert np.array_equal(fmat.read(tmp_path / "a.fmat"), a)


def test_bundle_round_trip():
    t = {"w": np.ones((2, 3)), "b": np.arange(4.0), "s": np.array(2.5)}
    out, meta = fmat.decode_bundle(fmat.encode_bundle(t, {"depth": 2}))
    assert list(out) == ["w", "b", "s"] and meta == {"depth": 2}
    for k in t:
        assert np.array_equal(out[k], t[k])


def test_errors():
    good = fmat.encode(np.zeros(3))
    with pytest.raises(ParseError):
        fmat.decode(b"XMAT" + good[4:])
    with pytest.raises(ParseError):
        fmat.decode(good[:-1])
    with pytest.raises(ParseError):
        fmat.decode(good + b"\0")
    with pytest.raises(SchemaError):
        fmat.decode(good[:4] + struct.pack("<I", 2) + good[8:])
    with pytest.raises(SchemaError):
        fmat.encode(np.array([np.nan]))
    with pytest.raises(ParseError):
        fmat.decode_bundle(good)
