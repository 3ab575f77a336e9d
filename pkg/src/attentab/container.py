"""Binary container files: a magic string, a JSON header, and float64 blobs.

Layout (all integers little-endian):

    bytes 0..4    magic, 5 ASCII bytes ("ATTB1" for models, "ATTD1" for
                  encoded datasets)
    bytes 5..12   uint64 header length in bytes
    header        UTF-8 JSON; carries an ``arrays`` manifest of
                  ``{"name": ..., "shape": [...]}`` entries plus any
                  format-specific fields
    blobs         one little-endian float64 buffer per manifest entry,
                  row-major, concatenated in manifest order

Writes are atomic (temp file in the target directory, then rename), so a
crashed run never leaves a parseable but truncated file behind.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from .errors import PersistenceError

MODEL_MAGIC = b"ATTB1"
DATASET_MAGIC = b"ATTD1"

_LEN_FMT = "<Q"


def atomic_write_bytes(path: str, payload: bytes) -> None:
    """Write bytes to ``path`` via a temp file + rename in the same directory."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def encode_container(magic: bytes, header: dict, arrays: list[tuple[str, np.ndarray]]) -> bytes:
    """Serialize header + named arrays into container bytes.

    The manifest is derived from ``arrays`` and stored under the header key
    ``arrays``; blob order follows the list order exactly.
    """
    if len(magic) != 5:
        raise PersistenceError(f"magic must be 5 bytes, got {magic!r}")
    manifest = [{"name": name, "shape": list(arr.shape)} for name, arr in arrays]
    full_header = dict(header)
    full_header["arrays"] = manifest
    header_bytes = json.dumps(full_header, sort_keys=True).encode("utf-8")
    parts = [magic, struct.pack(_LEN_FMT, len(header_bytes)), header_bytes]
    for _, arr in arrays:
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def write_container(path: str, magic: bytes, header: dict, arrays: list[tuple[str, np.ndarray]]) -> None:
    atomic_write_bytes(path, encode_container(magic, header, arrays))


def read_container(path: str, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a container, returning (header, arrays by name).

    Raises PersistenceError on a wrong magic string, truncation, or a blob
    section whose size disagrees with the manifest.
    """
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise PersistenceError(f"cannot read container {path}: {exc}") from exc

    if len(blob) < 13:
        raise PersistenceError(f"{path}: truncated container (only {len(blob)} bytes)")
    if blob[:5] != magic:
        raise PersistenceError(
            f"{path}: bad magic {blob[:5]!r}, expected {magic.decode('ascii')!r}"
        )
    (header_len,) = struct.unpack(_LEN_FMT, blob[5:13])
    header_end = 13 + header_len
    if len(blob) < header_end:
        raise PersistenceError(f"{path}: truncated header")
    try:
        header = json.loads(blob[13:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise PersistenceError(f"{path}: corrupt header: {exc}") from exc

    arrays: dict[str, np.ndarray] = {}
    offset = header_end
    for entry in header.get("arrays", []):
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(blob):
            raise PersistenceError(f"{path}: truncated blob for array {entry['name']!r}")
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(shape)
        arrays[entry["name"]] = arr.astype(np.float64)
        offset += nbytes
    if offset != len(blob):
        raise PersistenceError(f"{path}: {len(blob) - offset} trailing bytes after blobs")
    return header, arrays
