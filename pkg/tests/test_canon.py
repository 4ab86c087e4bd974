"""Canonical serialization: pinned byte vectors and round trips."""

import hashlib
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dualmarket import canon
from dualmarket.errors import InvalidTx

# hand-assembled vectors; if any of these move, every hash in the system moves


def test_int_layout():
    assert canon.encode(0) == b"\x01" + b"\x00" * 8
    assert canon.encode(5) == b"\x01" + (5).to_bytes(8, "little")
    assert canon.encode(2**64 - 1) == b"\x01" + b"\xff" * 8


def test_int_range_enforced():
    with pytest.raises(InvalidTx):
        canon.encode(-1)
    with pytest.raises(InvalidTx):
        canon.encode(2**64)


def test_bytes_and_str_layout():
    assert canon.encode(b"ab") == b"\x02\x02\x00\x00\x00ab"
    assert canon.encode("hi") == b"\x03\x02\x00\x00\x00hi"
    # non-ascii goes through utf-8
    assert canon.encode("é") == b"\x03\x02\x00\x00\x00" + "é".encode()


def test_bool_layout_and_precedence():
    assert canon.encode(True) == b"\x06\x01"
    assert canon.encode(False) == b"\x06\x00"
    # bool is an int subclass; it must not serialize as an int
    assert canon.encode(True) != canon.encode(1)


def test_sequence_layout():
    inner = canon.encode(1) + canon.encode(b"a")
    assert canon.encode((1, b"a")) == b"\x04\x02\x00\x00\x00" + inner
    assert canon.encode([1, b"a"]) == canon.encode((1, b"a"))
    assert canon.encode(()) == b"\x04\x00\x00\x00\x00"


def test_f64_array_layout():
    arr = np.array([[1.0, 2.0]], dtype=np.float64)
    want = (
        b"\x05"
        + b"\x02"
        + struct.pack("<Q", 1)
        + struct.pack("<Q", 2)
        + struct.pack("<d", 1.0)
        + struct.pack("<d", 2.0)
    )
    assert canon.encode(arr) == want


def test_f64_rejects_other_dtypes():
    with pytest.raises(InvalidTx):
        canon.encode(np.zeros(3, dtype=np.float32))


def test_unsupported_type():
    with pytest.raises(InvalidTx):
        canon.encode({"a": 1})


def test_digest_is_sha256_of_encoding():
    value = ("transfer", 3, b"xy")
    assert canon.digest(value) == hashlib.sha256(canon.encode(value)).digest()


def test_chain_hash():
    prev = b"\x00" * 32
    tx = canon.encode(("mint", 5))
    assert canon.chain_hash(prev, tx) == hashlib.sha256(prev + tx).digest()


def test_decode_f64_roundtrip_with_tail():
    a = np.arange(6, dtype=np.float64).reshape(2, 3)
    b = np.array([7.0, 8.0])
    blob = canon.encode(a) + canon.encode(b)
    got_a, rest = canon.decode_f64_array(blob)
    got_b, tail = canon.decode_f64_array(rest)
    assert np.array_equal(got_a, a) and got_a.shape == (2, 3)
    assert np.array_equal(got_b, b)
    assert tail == b""


def test_decode_f64_rejects_truncation_and_wrong_tag():
    blob = canon.encode(np.ones((2, 2)))
    with pytest.raises(InvalidTx):
        canon.decode_f64_array(blob[:-1])
    with pytest.raises(InvalidTx):
        canon.decode_f64_array(canon.encode(7))


def test_non_contiguous_array_encodes_as_c_order():
    a = np.arange(12, dtype=np.float64).reshape(3, 4)
    assert canon.encode(a.T) == canon.encode(np.ascontiguousarray(a.T))


value_strategy = st.recursive(
    st.one_of(
        st.integers(min_value=0, max_value=2**64 - 1),
        st.binary(max_size=32),
        st.text(max_size=16),
        st.booleans(),
    ),
    lambda children: st.lists(children, max_size=4).map(tuple),
    max_leaves=12,
)


@given(value_strategy, value_strategy)
def test_encoding_is_injective(x, y):
    if canon.encode(x) == canon.encode(y):
        assert x == y or _normalize(x) == _normalize(y)


def _normalize(v):
    # lists and tuples intentionally share an encoding
    if isinstance(v, (list, tuple)):
        return tuple(_normalize(i) for i in v)
    if isinstance(v, bytearray):
        return bytes(v)
    return v


@given(value_strategy)
def test_encoding_is_deterministic(v):
    assert canon.encode(v) == canon.encode(v)
