"""Versioned binary tensor containers with CRC32 integrity checking.

Layout: magic | version u16 | meta length u32 | JSON metadata | tensor blobs
| CRC32, all little-endian. The metadata carries an ordered tensor directory
(name, shape, dtype) so blobs are self-describing; quantized tensors add
their per-tensor range and bit width to the directory entry.
"""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np

from .errors import ChecksumError, FormatVersionError, MissingInput

_DTYPES = {"f32": np.float32, "f64": np.float64, "u8": np.uint8, "u16": np.uint16}
_DTYPE_NAMES = {np.dtype(v): k for k, v in _DTYPES.items()}


def write_container(path, magic: bytes, version: int, meta: dict, tensors: list[tuple[dict, np.ndarray]]) -> None:
    """Write a container; ``tensors`` pairs a directory entry with its array."""
    directory = []
    blobs = []
    for entry, array in tensors:
        array = np.ascontiguousarray(array)
        dtype_name = _DTYPE_NAMES.get(array.dtype)
        if dtype_name is None:
            raise ValueError(f"unsupported tensor dtype {array.dtype}")
        directory.append({**entry, "shape": list(array.shape), "dtype": dtype_name})
        blobs.append(array.astype(array.dtype.newbyteorder("<")).tobytes())

    meta_bytes = json.dumps({**meta, "tensors": directory}, sort_keys=True).encode("utf-8")
    body = magic + struct.pack("<HI", version, len(meta_bytes)) + meta_bytes + b"".join(blobs)
    with open(path, "wb") as fh:
        fh.write(body + struct.pack("<I", zlib.crc32(body)))


def read_container(path, magic: bytes, max_version: int) -> tuple[int, dict, dict[str, np.ndarray]]:
    """Read and verify a container; returns (version, metadata, tensors by name)."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except FileNotFoundError as exc:
        raise MissingInput(f"{path}: no such file") from exc
    if len(data) < len(magic) + 10 or not data.startswith(magic):
        raise FormatVersionError(f"{path}: not a {magic.decode('ascii', 'replace')} file")
    off = len(magic)
    version, meta_len = struct.unpack_from("<HI", data, off)
    if version > max_version:
        raise FormatVersionError(f"{path}: version {version} is newer than supported {max_version}")

    body, stored = data[:-4], data[-4:]
    if struct.pack("<I", zlib.crc32(body)) != stored:
        raise ChecksumError(f"{path}: CRC32 mismatch (truncated or corrupted)")

    off += 6
    try:
        meta = json.loads(body[off:off + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ChecksumError(f"{path}: unreadable metadata block: {exc}") from exc
    off += meta_len

    tensors = {}
    for entry in meta.get("tensors", []):
        dtype = np.dtype(_DTYPES[entry["dtype"]]).newbyteorder("<")
        count = int(np.prod(entry["shape"], dtype=np.int64)) if entry["shape"] else 1
        nbytes = count * dtype.itemsize
        if off + nbytes > len(body):
            raise ChecksumError(f"{path}: tensor blob for {entry['name']!r} runs past end of file")
        array = np.frombuffer(body, dtype=dtype, count=count, offset=off)
        tensors[entry["name"]] = array.astype(dtype.newbyteorder("=")).reshape(entry["shape"])
        off += nbytes
    meta["tensors"] = {e["name"]: e for e in meta.get("tensors", [])}
    return version, meta, tensors
