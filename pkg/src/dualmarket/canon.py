"""Canonical, portable byte serialization.

Every hash in the system (transaction chain, registry, result digests) is
SHA-256 over bytes produced here, so the layout is fixed and documented:

    value   := TAG payload
    0x01 int        u64 little-endian (0 <= v < 2**64)
    0x02 bytes      u32 LE length, raw bytes
    0x03 str        u32 LE length, UTF-8 bytes
    0x04 sequence   u32 LE element count, encoded elements in order
    0x05 f64 array  u8 ndim, ndim x u64 LE dims, C-order IEEE-754 LE doubles
    0x06 bool       u8 (0 or 1)

Tuples and lists both encode as sequences. Encoding is injective on the
supported types, so byte equality is value equality.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

from .errors import InvalidTx

TAG_INT = b"\x01"
TAG_BYTES = b"\x02"
TAG_STR = b"\x03"
TAG_SEQ = b"\x04"
TAG_F64 = b"\x05"
TAG_BOOL = b"\x06"


def encode(value) -> bytes:
    """Encode a value into its canonical byte form."""
    out = bytearray()
    _encode_into(out, value)
    return bytes(out)


def _encode_into(out: bytearray, value) -> None:
    # bool check must precede int (bool is an int subclass)
    if isinstance(value, bool):
        out += TAG_BOOL
        out += b"\x01" if value else b"\x00"
    elif isinstance(value, int):
        if not 0 <= value < 2**64:
            raise InvalidTx(f"integer out of canonical range: {value}")
        out += TAG_INT
        out += struct.pack("<Q", value)
    elif isinstance(value, (bytes, bytearray)):
        out += TAG_BYTES
        out += struct.pack("<I", len(value))
        out += bytes(value)
    elif isinstance(value, str):
        raw = value.encode("utf-8")
        out += TAG_STR
        out += struct.pack("<I", len(raw))
        out += raw
    elif isinstance(value, (list, tuple)):
        out += TAG_SEQ
        out += struct.pack("<I", len(value))
        for item in value:
            _encode_into(out, item)
    elif isinstance(value, np.ndarray):
        if value.dtype != np.float64:
            raise InvalidTx(f"only float64 arrays are canonical, got {value.dtype}")
        out += TAG_F64
        out += struct.pack("<B", value.ndim)
        for dim in value.shape:
            out += struct.pack("<Q", dim)
        out += np.ascontiguousarray(value).astype("<f8", copy=False).tobytes(order="C")
    else:
        raise InvalidTx(f"type {type(value).__name__} is not canonically serializable")


def decode_f64_array(data: bytes) -> tuple[np.ndarray, bytes]:
    """Decode one f64-array value from the front of `data`.

    Returns the array and the unconsumed tail. Only the array tag is
    decodable: it is the one value the protocol ships back and forth
    (checkpoint parameters); everything else is hash-only.
    """
    if len(data) < 2 or data[:1] != TAG_F64:
        raise InvalidTx("expected a canonical f64 array")
    ndim = data[1]
    off = 2
    dims = []
    for _ in range(ndim):
        if len(data) < off + 8:
            raise InvalidTx("truncated f64 array header")
        dims.append(struct.unpack_from("<Q", data, off)[0])
        off += 8
    count = 1
    for d in dims:
        count *= d
    end = off + 8 * count
    if len(data) < end:
        raise InvalidTx("truncated f64 array payload")
    arr = np.frombuffer(data[off:end], dtype="<f8").astype(np.float64).reshape(dims)
    return arr, data[end:]


def digest(value) -> bytes:
    """SHA-256 of the canonical encoding (32 bytes)."""
    return hashlib.sha256(encode(value)).digest()


def chain_hash(prev_head: bytes, tx_bytes: bytes) -> bytes:
    """Next head hash: SHA-256(prev_head || tx_bytes)."""
    return hashlib.sha256(prev_head + tx_bytes).digest()
