"""
SDVI1 Tensor Exchange Format

Layout: the 5 magic bytes ``SDVI1``, an unsigned 32-bit little-endian ndim,
ndim unsigned 32-bit little-endian dimensions, then row-major 32-bit
little-endian floats.
"""

import logging
import struct
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from ..errors import FormatError, ImageIOError

logger = logging.getLogger(__name__)

MAGIC = b"SDVI1"
_DTYPE = np.dtype("<f4")


def encode_tensor(array: np.ndarray) -> bytes:
    """Serialize an array to SDVI1 bytes."""
    array = np.asarray(array)
    header = MAGIC + struct.pack("<I", array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    return header + np.ascontiguousarray(array, dtype=_DTYPE).tobytes()


def decode_tensor(buffer: bytes, offset: int = 0) -> Tuple[np.ndarray, int]:
    """
    Decode one SDVI1 tensor starting at ``offset``.

    Returns:
        The decoded float64 array and the offset just past its data.

    Raises:
        FormatError: If the magic, header or payload length is wrong
    """
    if buffer[offset : offset + len(MAGIC)] != MAGIC:
        raise FormatError("Not an SDVI1 tensor (bad magic)")
    pos = offset + len(MAGIC)
    if len(buffer) < pos + 4:
        raise FormatError("Truncated SDVI1 header")
    (ndim,) = struct.unpack_from("<I", buffer, pos)
    pos += 4
    if len(buffer) < pos + 4 * ndim:
        raise FormatError("Truncated SDVI1 shape")
    shape = struct.unpack_from(f"<{ndim}I", buffer, pos)
    pos += 4 * ndim
    count = int(np.prod(shape, dtype=np.int64))
    end = pos + count * _DTYPE.itemsize
    if len(buffer) < end:
        raise FormatError(
            f"SDVI1 payload too short: expected {count} floats for shape {shape}"
        )
    data = np.frombuffer(buffer, dtype=_DTYPE, count=count, offset=pos)
    return data.astype(np.float64).reshape(shape), end


def write_tensor(path: Union[str, Path], array: np.ndarray) -> None:
    """Write ``array`` to ``path`` in SDVI1 format."""
    try:
        Path(path).write_bytes(encode_tensor(array))
    except OSError as e:
        raise ImageIOError(f"Cannot write tensor to {path}: {e}") from e
    logger.debug(f"Wrote SDVI1 tensor {np.shape(array)} to {path}")


def read_tensor(path: Union[str, Path]) -> np.ndarray:
    """Read a single SDVI1 tensor from ``path``; trailing bytes are rejected."""
    try:
        buffer = Path(path).read_bytes()
    except OSError as e:
        raise ImageIOError(f"Cannot read tensor from {path}: {e}") from e
    array, end = decode_tensor(buffer)
    if end != len(buffer):
        raise FormatError(f"Trailing bytes after SDVI1 tensor in {path}")
    return array
