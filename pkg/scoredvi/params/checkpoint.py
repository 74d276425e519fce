"""
Weight Checkpoints

A checkpoint is two files: ``<path>`` holds SDVI1 tensors back to back and
``<path>.manifest`` lists one ``name shape offset`` line per tensor, with the
shape written as comma-separated dimensions.
"""

import logging
from pathlib import Path
from typing import Dict, Union

import numpy as np

from ..core.tensorio import decode_tensor, encode_tensor
from ..errors import ArgumentError, FormatError, ImageIOError

logger = logging.getLogger(__name__)

MANIFEST_SUFFIX = ".manifest"


def manifest_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_name(path.name + MANIFEST_SUFFIX)


def save_checkpoint(path: Union[str, Path], params: Dict[str, np.ndarray]) -> Path:
    """
    Write ``params`` to ``path`` plus its manifest.

    Returns:
        The manifest path
    """
    blob = bytearray()
    lines = []
    for name, value in params.items():
        if any(ch.isspace() for ch in name):
            raise ArgumentError(f"Parameter name may not contain whitespace: {name!r}")
        shape = ",".join(str(dim) for dim in np.shape(value)) or "-"
        lines.append(f"{name} {shape} {len(blob)}")
        blob += encode_tensor(value)

    manifest = manifest_path(path)
    try:
        Path(path).write_bytes(bytes(blob))
        manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as e:
        raise ImageIOError(f"Cannot write checkpoint {path}: {e}") from e
    logger.debug(f"Saved checkpoint with {len(lines)} tensors to {path}")
    return manifest


def read_checkpoint(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    """
    Read every tensor listed in the manifest of ``path``.

    Raises:
        ImageIOError: If either file cannot be read
        FormatError: If the manifest and the tensor blob disagree
    """
    try:
        blob = Path(path).read_bytes()
        text = manifest_path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ImageIOError(f"Cannot read checkpoint {path}: {e}") from e

    tensors: Dict[str, np.ndarray] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 3:
            raise FormatError(f"Malformed manifest line {lineno}: {line!r}")
        name, shape_text, offset_text = parts
        try:
            shape = () if shape_text == "-" else tuple(int(v) for v in shape_text.split(","))
            offset = int(offset_text)
        except ValueError as e:
            raise FormatError(f"Malformed manifest line {lineno}: {line!r}") from e
        array, _ = decode_tensor(blob, offset)
        if array.shape != shape:
            raise FormatError(
                f"Tensor {name} has shape {array.shape}, manifest says {shape}"
            )
        tensors[name] = array
    return tensors


def load_checkpoint(path: Union[str, Path], params: Dict[str, np.ndarray]) -> None:
    """
    Copy checkpointed values into ``params`` in place.

    Raises:
        ArgumentError: If a parameter is missing or has a different shape
    """
    stored = read_checkpoint(path)
    for name, value in params.items():
        if name not in stored:
            raise ArgumentError(f"Checkpoint {path} has no tensor named {name}")
        if stored[name].shape != value.shape:
            raise ArgumentError(
                f"Checkpoint tensor {name} has shape {stored[name].shape}, "
                f"expected {value.shape}"
            )
        value[...] = stored[name]
    logger.info(f"Loaded {len(params)} tensors from checkpoint {path}")
