"""Writer and structural reader for the EMB1 embedding container.

Layout, all integers little-endian:

  magic "EMB1" | u32 record_count | u32 layer_count | u32 dim_per_layer
  index block: per record, u16 key_len followed by the UTF-8 key bytes
  data block: per record, layer_count*dim_per_layer little-endian f32

Values are laid out layer-major with the embedding layer first, so a single
layer is a contiguous slice of its record. The writer refuses duplicate keys
and non-finite values; the reader here parses structure only and leaves the
finite scan to verification, so a NaN-injected file can be reported as a
failed check instead of an exception. Files are written whole through a
temp-file rename, so readers never observe partial output.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

from .glosses import DumpError

MAGIC = b"EMB1"
HEADER = struct.Struct("<III")


def atomic_write_bytes(path: str, data: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def write_records(path: str, keys: list, values, layer_count: int, dim_per_layer: int) -> None:
    n = len(keys)
    width = layer_count * dim_per_layer
    values = np.asarray(values, dtype="<f4")
    if n == 0:
        raise DumpError("no-records", "refusing to write an empty store")
    if values.shape != (n, width):
        raise DumpError("truncated", f"values shape {values.shape} != ({n}, {width})")
    if len(set(keys)) != n:
        raise DumpError("duplicate-key", "record keys are not unique")
    if not np.isfinite(values).all():
        raise DumpError("non-finite", "records contain nan or inf values")
    parts = [MAGIC, HEADER.pack(n, layer_count, dim_per_layer)]
    for key in keys:
        raw = key.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise DumpError("bad-key", f"key too long ({len(raw)} bytes)")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
    parts.append(np.ascontiguousarray(values).tobytes())
    atomic_write_bytes(path, b"".join(parts))


def read_records(path: str) -> tuple:
    """Parse structure; returns (keys, values, layer_count, dim_per_layer)
    with values shaped (n, layer_count*dim_per_layer). Values may be
    non-finite; scanning them is the verifier's job."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) >= 4 and blob[:4] != MAGIC:
        raise DumpError("bad-magic", f"expected {MAGIC!r}, found {blob[:4]!r}")
    if len(blob) < 16:
        raise DumpError("truncated", f"file is only {len(blob)} bytes")
    n, layer_count, dim = HEADER.unpack_from(blob, 4)
    offset = 16
    keys = []
    for _ in range(n):
        if offset + 2 > len(blob):
            raise DumpError("truncated", "index block ends mid-record")
        (key_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        if offset + key_len > len(blob):
            raise DumpError("truncated", "key bytes run past end of file")
        keys.append(blob[offset : offset + key_len].decode("utf-8"))
        offset += key_len
    if len(set(keys)) != n:
        raise DumpError("duplicate-key", "file contains duplicate keys")
    expected = n * layer_count * dim * 4
    if len(blob) - offset != expected:
        raise DumpError("truncated", f"data block holds {len(blob) - offset} bytes, expected {expected}")
    values = np.frombuffer(blob, dtype="<f4", count=n * layer_count * dim, offset=offset)
    return keys, values.reshape(n, layer_count * dim).copy(), layer_count, dim
