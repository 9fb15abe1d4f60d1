"""Single-file container for named arrays plus a JSON header.

Layout::

    b"DGONET\\x00\\x01"             8-byte magic
    uint32 LE                      header length in bytes
    header                         UTF-8 JSON, keys sorted
    blocks                         raw little-endian arrays, in header order
    sha256                         32-byte digest of everything above

The header carries ``format_version``, ``kind`` and a ``blocks`` list of
{name, dtype, shape, offset, nbytes} with offsets relative to the first block.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"DGONET\x00\x01"
FORMAT_VERSION = 1
_DIGEST = 32


def _le_dtype(dtype: np.dtype) -> np.dtype:
    return np.dtype(dtype).newbyteorder("<")


def dumps(header: dict, arrays: dict[str, np.ndarray]) -> bytes:
    header = dict(header)
    header.setdefault("format_version", FORMAT_VERSION)
    blocks, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        le = arr.astype(_le_dtype(arr.dtype), copy=False)
        raw = le.tobytes()
        blocks.append({"name": name, "dtype": le.dtype.str, "shape": list(arr.shape),
                       "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header["blocks"] = blocks
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = MAGIC + struct.pack("<I", len(head)) + head + b"".join(chunks)
    return body + hashlib.sha256(body).digest()


def loads(data: bytes, kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    if len(data) < len(MAGIC) + 4 + _DIGEST or not data.startswith(MAGIC):
        raise CheckpointError("not a container file or truncated header")
    body, digest = data[:-_DIGEST], data[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checksum mismatch: file is truncated or corrupt")
    (head_len,) = struct.unpack_from("<I", body, len(MAGIC))
    start = len(MAGIC) + 4
    try:
        header = json.loads(body[start:start + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable header: {exc}") from None
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"format version {version} is not supported (expected {FORMAT_VERSION})")
    if kind is not None and header.get("kind") != kind:
        raise CheckpointError(f"expected a {kind} file, found {header.get('kind')!r}")
    payload = body[start + head_len:]
    arrays = {}
    for blk in header["blocks"]:
        lo, hi = blk["offset"], blk["offset"] + blk["nbytes"]
        if hi > len(payload):
            raise CheckpointError(f"block {blk['name']} extends past end of file")
        arr = np.frombuffer(payload[lo:hi], dtype=np.dtype(blk["dtype"]))
        arrays[blk["name"]] = arr.reshape(blk["shape"]).astype(
            arr.dtype.newbyteorder("="), copy=True)
    return header, arrays


def write(path: str | Path, header: dict, arrays: dict[str, np.ndarray]) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps(header, arrays))
    os.replace(tmp, path)


def read(path: str | Path, kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    return loads(Path(path).read_bytes(), kind)
