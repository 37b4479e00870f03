"""Named-tensor container used for checkpoints and feature archives.

Little-endian layout: magic "SSCN", format version u32, entry count u32;
per entry: name length u32, UTF-8 name, dtype code u8 (0 = f32, 1 = f64),
rank u8, dims as u64 each, raw data.  The file ends with a CRC32 of all
preceding bytes.
"""

from __future__ import annotations

import io
import struct
import zlib

import numpy as np

MAGIC = b"SSCN"
FORMAT_VERSION = 1

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODE_FOR_KIND = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class ContainerError(ValueError):
    """Base class for container format problems."""


class BadMagicError(ContainerError):
    pass


class VersionError(ContainerError):
    pass


class TruncatedError(ContainerError):
    pass


class CrcError(ContainerError):
    pass


def write_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    """Serialize name -> float32/float64 array mappings (insertion order kept)."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype not in _CODE_FOR_KIND:
            raise ValueError(f"tensor {name!r} has unsupported dtype {arr.dtype}; use float32 or float64")
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<I", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<BB", _CODE_FOR_KIND[arr.dtype], arr.ndim))
        for dim in arr.shape:
            buf.write(struct.pack("<Q", dim))
        buf.write(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
    blob = buf.getvalue()
    crc = zlib.crc32(blob) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(blob)
        fh.write(struct.pack("<I", crc))


def read_tensors(path) -> dict[str, np.ndarray]:
    """Read a container back; validates CRC first, then header and entries."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16:
        raise TruncatedError(f"file is only {len(blob)} bytes, smaller than any valid container")
    body, crc_bytes = blob[:-4], blob[-4:]
    (stored_crc,) = struct.unpack("<I", crc_bytes)
    actual_crc = zlib.crc32(body) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise CrcError(f"CRC mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}")
    if body[0:4] != MAGIC:
        raise BadMagicError(f"bad magic {body[0:4]!r}, expected {MAGIC!r}")
    (version,) = struct.unpack_from("<I", body, 4)
    if version != FORMAT_VERSION:
        raise VersionError(f"format version {version} not supported (expected {FORMAT_VERSION})")
    (count,) = struct.unpack_from("<I", body, 8)
    pos = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        if pos + 4 > len(body):
            raise TruncatedError("entry header runs past end of file")
        (name_len,) = struct.unpack_from("<I", body, pos)
        pos += 4
        if pos + name_len + 2 > len(body):
            raise TruncatedError("entry name runs past end of file")
        name = body[pos : pos + name_len].decode("utf-8")
        pos += name_len
        code, rank = struct.unpack_from("<BB", body, pos)
        pos += 2
        if code not in _DTYPE_CODES:
            raise ContainerError(f"entry {name!r} has unknown dtype code {code}")
        if pos + 8 * rank > len(body):
            raise TruncatedError(f"entry {name!r} dims run past end of file")
        dims = struct.unpack_from(f"<{rank}Q", body, pos) if rank else ()
        pos += 8 * rank
        dtype = _DTYPE_CODES[code]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize if rank else dtype.itemsize
        if rank == 0:
            nbytes = dtype.itemsize
        if pos + nbytes > len(body):
            raise TruncatedError(f"entry {name!r} data runs past end of file")
        arr = np.frombuffer(body, dtype=dtype, count=nbytes // dtype.itemsize, offset=pos).reshape(dims)
        out[name] = arr.copy()
        pos += nbytes
    if pos != len(body):
        raise ContainerError(f"{len(body) - pos} trailing bytes after the last entry")
    return out


def pack_bytes(raw: bytes) -> np.ndarray:
    """Encode arbitrary bytes as a float64 vector of byte values (lossless)."""
    return np.frombuffer(raw, dtype=np.uint8).astype(np.float64)


def unpack_bytes(arr: np.ndarray) -> bytes:
    return np.asarray(arr, dtype=np.float64).astype(np.uint8).tobytes()
