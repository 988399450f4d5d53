"""
Binary file formats.

WBTH1 stores a sparse wavelet-domain operator:

```
b"WBTH1"                  magic (5 bytes)
u32 N                     matrix side (number of coefficients)
u64 nnz                   number of records
nnz x (u32 row, u32 col, f64 value)
```

records sorted by column then row. WBPSF1 stores a grid of point spread
functions:

```
b"WBPSF1"                 magic (6 bytes)
u32 s                     anchors per axis
u32 p                     patch side
s*s*p*p x f64             patches, anchor-major then row-major
```

All integers and floats are little-endian.
"""

import struct

import numpy as np

from .errors import CorruptFileError

THETA_MAGIC = b"WBTH1"
PSF_MAGIC = b"WBPSF1"

THETA_RECORD = np.dtype([("row", "<u4"), ("col", "<u4"), ("value", "<f8")])

_THETA_HEADER = struct.Struct("<IQ")
_PSF_HEADER = struct.Struct("<II")


def encode_theta(
    size: int, rows: np.ndarray, cols: np.ndarray, values: np.ndarray
) -> bytes:
    """
    Encode sorted triplets as a WBTH1 payload.

    Args:
        size: Matrix side ``N``.
        rows: Row indices, sorted together with ``cols`` by column then row.
        cols: Column indices.
        values: Entry values.

    Returns:
        The file contents.
    """
    records = np.empty(len(values), dtype=THETA_RECORD)
    records["row"] = rows
    records["col"] = cols
    records["value"] = values
    return THETA_MAGIC + _THETA_HEADER.pack(size, len(records)) + records.tobytes()


def decode_theta(data: bytes) -> tuple[int, np.ndarray]:
    """
    Decode a WBTH1 payload.

    Args:
        data: The file contents.

    Returns:
        ``(N, records)`` with ``records`` a structured array of `THETA_RECORD`.

    Raises:
        CorruptFileError: On a bad magic, a length mismatch, out-of-range or
            unsorted indices, or non-finite values.
    """
    header_end = len(THETA_MAGIC) + _THETA_HEADER.size
    if len(data) < header_end or not data.startswith(THETA_MAGIC):
        raise CorruptFileError("Not a WBTH1 file")
    size, nnz = _THETA_HEADER.unpack_from(data, len(THETA_MAGIC))
    expected = header_end + nnz * THETA_RECORD.itemsize
    if len(data) != expected:
        raise CorruptFileError(
            f"WBTH1 length mismatch: expected {expected} bytes, got {len(data)}"
        )
    records = np.frombuffer(data, dtype=THETA_RECORD, offset=header_end, count=nnz)
    if nnz:
        if records["row"].max() >= size or records["col"].max() >= size:
            raise CorruptFileError("WBTH1 index out of range")
        keys = records["col"].astype(np.uint64) * size + records["row"]
        if np.any(np.diff(keys.astype(np.int64)) <= 0):
            raise CorruptFileError("WBTH1 records are not sorted or contain duplicates")
        if not np.all(np.isfinite(records["value"])):
            raise CorruptFileError("WBTH1 contains non-finite values")
    return size, records


def encode_psf_grid(patches: np.ndarray) -> bytes:
    """Encode an ``(s, s, p, p)`` stack of patches as a WBPSF1 payload."""
    patches = np.ascontiguousarray(patches, dtype="<f8")
    anchors, _, side, _ = patches.shape
    return PSF_MAGIC + _PSF_HEADER.pack(anchors, side) + patches.tobytes()


def decode_psf_grid(data: bytes) -> np.ndarray:
    """
    Decode a WBPSF1 payload into an ``(s, s, p, p)`` array.

    Raises:
        CorruptFileError: On a bad magic or a length mismatch.
    """
    header_end = len(PSF_MAGIC) + _PSF_HEADER.size
    if len(data) < header_end or not data.startswith(PSF_MAGIC):
        raise CorruptFileError("Not a WBPSF1 file")
    anchors, side = _PSF_HEADER.unpack_from(data, len(PSF_MAGIC))
    count = anchors * anchors * side * side
    if anchors == 0 or side == 0 or len(data) != header_end + 8 * count:
        raise CorruptFileError("WBPSF1 length mismatch")
    values = np.frombuffer(data, dtype="<f8", offset=header_end, count=count)
    return values.reshape(anchors, anchors, side, side).astype(np.float64)
