"""Versioned binary container shared by checkpoints, buffers and datasets.

Layout: magic "GJEM", format version (u32 LE), then tensor records until
EOF. Each record is name length (u32 LE), UTF-8 name, rank (u32 LE),
extents (u64 LE each), then the float64 payload (LE). A final record named
"__crc32__" holds the CRC-32 of every byte after the version field as a one
element tensor; readers verify it when present.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

MAGIC = b"GJEM"
VERSION = 1
CRC_RECORD = "__crc32__"
_MAX_NAME = 1 << 16
_MAX_RANK = 32


class ContainerError(Exception):
    """Malformed header, truncation, or checksum mismatch."""


def _record_bytes(name: str, arr: np.ndarray) -> bytes:
    encoded = name.encode("utf-8")
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    head = struct.pack("<I", len(encoded)) + encoded + struct.pack("<I", arr.ndim)
    head += b"".join(struct.pack("<Q", s) for s in arr.shape)
    return head + arr.astype("<f8").tobytes()


def write_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    body = b"".join(_record_bytes(name, np.asarray(arr)) for name, arr in tensors.items())
    crc = zlib.crc32(body)
    body += _record_bytes(CRC_RECORD, np.array([float(crc)]))
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(body)


def read_tensors(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise ContainerError(f"{path}: not a GJEM container (bad magic)")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise ContainerError(f"{path}: unsupported container version {version}")

    tensors: dict[str, np.ndarray] = {}
    offset = 8
    crc_value = None
    body_end_before_crc = None
    while offset < len(raw):
        record_start = offset
        offset, name, arr = _read_record(raw, offset, path)
        if name == CRC_RECORD:
            crc_value = int(arr[0])
            body_end_before_crc = record_start
        else:
            tensors[name] = arr
    if crc_value is not None:
        actual = zlib.crc32(raw[8:body_end_before_crc])
        if actual != crc_value:
            raise ContainerError(f"{path}: checksum mismatch")
    return tensors


def _read_record(raw: bytes, offset: int, path) -> tuple[int, str, np.ndarray]:
    def take(n: int, what: str) -> bytes:
        nonlocal offset
        if offset + n > len(raw):
            raise ContainerError(f"{path}: truncated while reading {what}")
        chunk = raw[offset : offset + n]
        offset += n
        return chunk

    (name_len,) = struct.unpack("<I", take(4, "record name length"))
    if name_len > _MAX_NAME:
        raise ContainerError(f"{path}: implausible record name length {name_len}")
    try:
        name = take(name_len, "record name").decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ContainerError(f"{path}: record name is not UTF-8") from exc
    (rank,) = struct.unpack("<I", take(4, "record rank"))
    if rank > _MAX_RANK:
        raise ContainerError(f"{path}: implausible rank {rank} for {name!r}")
    shape = tuple(
        struct.unpack("<Q", take(8, f"extent of {name!r}"))[0] for _ in range(rank)
    )
    count = 1
    for s in shape:
        count *= s
    payload = take(8 * count, f"payload of {name!r}")
    arr = np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)
    return offset, name, arr
