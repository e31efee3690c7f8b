"""Binary matrix container: exact, self-describing artifact files.

Layout (all integers little-endian):

    magic "SOMX" | u32 version | u32 matrix count
    per matrix:  u32 name byte length | name (UTF-8) |
                 u64 rows | u64 cols | rows*cols float64 (row-major, LE)
    u32 metadata byte length | metadata (UTF-8 "key=value" lines)

Float payloads are written byte-exact, so a read-back equals the written
matrix bitwise (including negative zero).  CSV is for human-facing
tables; matrices go through this format because they must be exact.
"""

import struct
from pathlib import Path

import numpy as np

__all__ = ["ContainerError", "write_container", "read_container", "MAGIC", "VERSION"]

MAGIC = b"SOMX"
VERSION = 1


class ContainerError(ValueError):
    """Malformed or inconsistent container file."""


def _encode_metadata(metadata):
    lines = []
    for key, value in metadata.items():
        key = str(key)
        value = str(value)
        if "=" in key or "\n" in key or "\n" in value:
            raise ContainerError(f"metadata key/value not encodable: {key!r}={value!r}")
        lines.append(f"{key}={value}")
    return "\n".join(lines).encode("utf-8")


def _decode_metadata(blob):
    metadata = {}
    if not blob:
        return metadata
    for line in blob.decode("utf-8").split("\n"):
        key, sep, value = line.partition("=")
        if not sep:
            raise ContainerError(f"metadata line without '=': {line!r}")
        metadata[key] = value
    return metadata


def write_container(path, matrices, metadata=None):
    """Write named matrices plus metadata; returns the path.

    ``matrices`` maps names to arrays; 1-d arrays are stored as single
    columns.  Insertion order is preserved.
    """
    path = Path(path)
    entries = []
    for name, matrix in matrices.items():
        arr = np.asarray(matrix, dtype="<f8")
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        if arr.ndim != 2:
            raise ContainerError(f"matrix {name!r} must be 1- or 2-dimensional")
        entries.append((str(name), arr))
    meta_blob = _encode_metadata(metadata or {})
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(entries)))
        for name, arr in entries:
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<I", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<QQ", arr.shape[0], arr.shape[1]))
            fh.write(np.ascontiguousarray(arr).tobytes())
        fh.write(struct.pack("<I", len(meta_blob)))
        fh.write(meta_blob)
    return path


def _read_exact(fh, count, what):
    blob = fh.read(count)
    if len(blob) != count:
        raise ContainerError(f"truncated container while reading {what}")
    return blob


def read_container(path):
    """Read back ``(matrices, metadata)`` from a container file.

    Matrices are returned in file order as an ordered dict of float64
    arrays; payload bytes are taken verbatim.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != MAGIC:
            raise ContainerError(f"{path} is not a matrix container (bad magic)")
        version, count = struct.unpack("<II", _read_exact(fh, 8, "header"))
        if version != VERSION:
            raise ContainerError(f"unsupported container version {version}")
        matrices = {}
        for i in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4, f"entry {i} name length"))
            name = _read_exact(fh, name_len, f"entry {i} name").decode("utf-8")
            rows, cols = struct.unpack("<QQ", _read_exact(fh, 16, f"entry {name!r} shape"))
            payload = _read_exact(fh, rows * cols * 8, f"entry {name!r} payload")
            matrix = np.frombuffer(payload, dtype="<f8").reshape(rows, cols).copy()
            if name in matrices:
                raise ContainerError(f"duplicate matrix name {name!r}")
            matrices[name] = matrix
        (meta_len,) = struct.unpack("<I", _read_exact(fh, 4, "metadata length"))
        metadata = _decode_metadata(_read_exact(fh, meta_len, "metadata"))
        trailing = fh.read(1)
        if trailing:
            raise ContainerError("trailing bytes after metadata block")
    return matrices, metadata
