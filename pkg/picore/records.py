"""
PICF binary records.

Layout: magic ``b"PICF"``, little-endian uint32 ndim, ndim little-endian uint32
extents, then the row-major little-endian float64 payload. Checkpoints append
a uint32 byte length and a UTF-8 JSON document after the record.
"""

import json
import logging
from pathlib import Path
from typing import Any

import numpy as np

from .errors import RecordFormatError

logger = logging.getLogger(__name__)

MAGIC = b"PICF"
_U32 = np.dtype("<u4")
_F64 = np.dtype("<f8")


def encode(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype=_F64)
    header = np.array([arr.ndim, *arr.shape], dtype=_U32).tobytes()
    return MAGIC + header + arr.tobytes(order="C")


def decode(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decodes one record starting at offset, returning it and the offset just past it."""
    if buf[offset : offset + 4] != MAGIC:
        raise RecordFormatError("missing PICF magic")
    offset += 4
    try:
        ndim = int(np.frombuffer(buf, dtype=_U32, count=1, offset=offset)[0])
        offset += 4
        shape = tuple(int(s) for s in np.frombuffer(buf, dtype=_U32, count=ndim, offset=offset))
        offset += 4 * ndim
        count = int(np.prod(shape, dtype=np.int64))
        values = np.frombuffer(buf, dtype=_F64, count=count, offset=offset)
    except ValueError as e:
        raise RecordFormatError(f"truncated PICF record: {e}") from e
    offset += 8 * count
    return values.reshape(shape).astype(np.float64), offset


def write_record(path: Path, arr: np.ndarray) -> None:
    Path(path).write_bytes(encode(arr))


def read_record(path: Path) -> np.ndarray:
    buf = Path(path).read_bytes()
    arr, end = decode(buf)
    if end != len(buf):
        raise RecordFormatError(f"{path}: {len(buf) - end} trailing bytes")
    return arr


def write_checkpoint(path: Path, flat: np.ndarray, meta: dict[str, Any]) -> None:
    doc = json.dumps(meta, sort_keys=True).encode()
    length = np.array([len(doc)], dtype=_U32).tobytes()
    Path(path).write_bytes(encode(flat) + length + doc)
    logger.info(f"Wrote checkpoint to {path}")


def read_checkpoint(path: Path) -> tuple[np.ndarray, dict[str, Any]]:
    buf = Path(path).read_bytes()
    flat, offset = decode(buf)
    if flat.ndim != 1:
        raise RecordFormatError("checkpoint parameters must be a flat vector")
    if len(buf) < offset + 4:
        raise RecordFormatError("checkpoint is missing its config document")
    length = int(np.frombuffer(buf, dtype=_U32, count=1, offset=offset)[0])
    doc = buf[offset + 4 : offset + 4 + length]
    if len(doc) != length:
        raise RecordFormatError("truncated checkpoint config document")
    return flat, json.loads(doc.decode())


def test_record_header():
    buf = encode(np.zeros((2, 3)))
    assert buf[:4] == MAGIC
    assert np.frombuffer(buf[4:16], dtype=_U32).tolist() == [2, 2, 3]
    assert len(buf) == 16 + 6 * 8
