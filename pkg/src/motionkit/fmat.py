"""FMAT: little-endian container for dense float64 tensors.

Layout: ``b"FMAT"``, u32 version (1), u32 ndim, u64 dims[ndim], then the
entries row-major as IEEE-754 float64. A parameter bundle is a rank-1 FMAT
holding every tensor concatenated, followed by a u64 byte count and a UTF-8
JSON manifest mapping tensor names to offsets and shapes.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import IoError, ParseError, SchemaError

MAGIC = b"FMAT"
VERSION = 1
_HEAD = struct.Struct("<4sII")


def encode(array) -> bytes:
    a = np.asarray(array, dtype="<f8", order="C")
    if not np.all(np.isfinite(a)):
        raise SchemaError("data", "FMAT entries must be finite")
    dims = struct.pack(f"<{a.ndim}Q", *a.shape)
    return _HEAD.pack(MAGIC, VERSION, a.ndim) + dims + a.tobytes()


def _decode(buf: bytes):
    if len(buf) < _HEAD.size:
        raise ParseError("truncated FMAT header")
    magic, version, ndim = _HEAD.unpack_from(buf, 0)
    if magic != MAGIC:
        raise ParseError(f"bad FMAT magic {magic!r}")
    if version != VERSION:
        raise SchemaError("version", f"unsupported FMAT version {version}")
    pos = _HEAD.size
    if len(buf) < pos + 8 * ndim:
        raise ParseError("truncated FMAT dims")
    dims = struct.unpack_from(f"<{ndim}Q", buf, pos)
    pos += 8 * ndim
    n = int(np.prod(dims, dtype=np.int64))
    end = pos + 8 * n
    if len(buf) < end:
        raise ParseError(f"FMAT payload truncated: need {8 * n} bytes, have {len(buf) - pos}")
    data = np.frombuffer(buf, dtype="<f8", count=n, offset=pos).astype(np.float64)
    return data.reshape(dims), end


def decode(buf: bytes) -> np.ndarray:
    arr, end = _decode(buf)
    if end != len(buf):
        raise ParseError(f"{len(buf) - end} trailing bytes after FMAT payload")
    return arr


def read(path) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as e:
        raise IoError(path, e.strerror or str(e)) from None
    return decode(buf)


def write(path, array):
    with open(path, "wb") as fh:
        fh.write(encode(array))


def encode_bundle(tensors: dict, meta: dict | None = None) -> bytes:
    """Pack named tensors (insertion order kept) into one FMAT plus a manifest."""
    entries, flat, offset = [], [], 0
    for name, t in tensors.items():
        t = np.asarray(t, dtype=np.float64)
        entries.append({"name": name, "offset": offset, "shape": list(t.shape)})
        flat.append(t.ravel())
        offset += t.size
    manifest = {"tensors": entries}
    if meta:
        manifest["meta"] = meta
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    body = encode(np.concatenate(flat) if flat else np.zeros(0))
    return body + struct.pack("<Q", len(blob)) + blob


def decode_bundle(buf: bytes):
    flat, end = _decode(buf)
    if len(buf) < end + 8:
        raise ParseError("parameter bundle lacks a manifest")
    (size,) = struct.unpack_from("<Q", buf, end)
    try:
        manifest = json.loads(buf[end + 8:end + 8 + size].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ParseError(f"bad bundle manifest: {e}") from None
    out = {}
    for e in manifest["tensors"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        out[e["name"]] = flat[e["offset"]:e["offset"] + n].reshape(e["shape"]).copy()
    return out, manifest.get("meta", {})
