"""
Image Tensors

Images, parameter maps and gradients are all carried as float64 numpy arrays
of shape (C, H, W). This module holds the helpers around that convention:
validation, pixel-shuffle downsampling and raster I/O.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Union

import numpy as np
import numpy.typing as npt
from PIL import Image, UnidentifiedImageError

from ..errors import ArgumentError, FormatError, ImageIOError

logger = logging.getLogger(__name__)

ImageTensor = npt.NDArray[np.float64]

_SUPPORTED_SUFFIXES = {".png", ".pgm", ".ppm", ".pnm"}


def as_image(data: npt.ArrayLike) -> ImageTensor:
    """
    Coerce ``data`` to a (C, H, W) float64 tensor.

    2-D input is treated as a single channel.

    Raises:
        ArgumentError: If the data is not 2-D or 3-D or has an empty axis
    """
    array = np.asarray(data, dtype=np.float64)
    if array.ndim == 2:
        array = array[np.newaxis]
    if array.ndim != 3 or min(array.shape) < 1:
        raise ArgumentError(f"Expected a (C, H, W) tensor, got shape {array.shape}")
    return array


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str = "tensors") -> None:
    """Raise ArgumentError unless ``a`` and ``b`` have identical shapes."""
    if np.shape(a) != np.shape(b):
        raise ArgumentError(
            f"Shape mismatch between {what}: {np.shape(a)} vs {np.shape(b)}"
        )


@dataclass(frozen=True)
class SubImageGrid:
    """Pixel-shuffle decomposition of an image into ``stride**2`` sub-images."""

    stride: int
    subs: List[ImageTensor]

    def reassemble(self) -> ImageTensor:
        """Interleave the sub-images back into the cropped original."""
        s = self.stride
        c, h, w = self.subs[0].shape
        out = np.empty((c, h * s, w * s), dtype=np.float64)
        for index, sub in enumerate(self.subs):
            a, b = divmod(index, s)
            out[:, a::s, b::s] = sub
        return out


def pd_down(img: ImageTensor, stride: int) -> SubImageGrid:
    """
    Split ``img`` into stride-spaced sub-images.

    Sub-image ``(a, b)`` (raster index ``a * stride + b``) holds rows
    ``a, a + s, ...`` and columns ``b, b + s, ...``. Trailing rows and
    columns that do not fill a whole stride are dropped.

    Raises:
        ArgumentError: If stride < 1 or larger than either spatial dimension
    """
    img = as_image(img)
    _, height, width = img.shape
    if stride < 1:
        raise ArgumentError(f"PD stride must be positive, got {stride}")
    if stride > height or stride > width:
        raise ArgumentError(
            f"PD stride {stride} exceeds image size {height}x{width}"
        )
    hc = (height // stride) * stride
    wc = (width // stride) * stride
    cropped = img[:, :hc, :wc]
    subs = [
        np.ascontiguousarray(cropped[:, a::stride, b::stride])
        for a in range(stride)
        for b in range(stride)
    ]
    return SubImageGrid(stride=stride, subs=subs)


def load_image(path: Union[str, Path]) -> ImageTensor:
    """
    Load an 8-bit grayscale or RGB raster scaled to [0, 1].

    Args:
        path: PNG or binary PGM/PPM file

    Returns:
        (C, H, W) tensor with C in {1, 3}

    Raises:
        ImageIOError: If the file cannot be opened
        FormatError: If the mode or bit depth is not supported
    """
    try:
        with Image.open(path) as handle:
            handle.load()
            mode = handle.mode
            if mode == "1":
                handle = handle.convert("L")
                mode = "L"
            if mode not in ("L", "RGB"):
                raise FormatError(
                    f"Unsupported image mode {mode!r} in {path}; "
                    "only 8-bit grayscale or RGB is accepted"
                )
            pixels = np.asarray(handle, dtype=np.uint8)
    except (FileNotFoundError, PermissionError, IsADirectoryError) as e:
        raise ImageIOError(f"Cannot read image {path}: {e}") from e
    except UnidentifiedImageError as e:
        raise FormatError(f"Unrecognized raster format: {path}") from e
    except OSError as e:
        raise ImageIOError(f"Cannot read image {path}: {e}") from e

    if pixels.ndim == 2:
        pixels = pixels[np.newaxis]
    else:
        pixels = pixels.transpose(2, 0, 1)
    logger.debug(f"Loaded {path} with shape {pixels.shape}")
    return pixels.astype(np.float64) / 255.0


def quantize(img: ImageTensor) -> np.ndarray:
    """Clamp to [0, 1] and round to 8-bit codes (round half up)."""
    img = as_image(img)
    if not np.all(np.isfinite(img)):
        raise ArgumentError("Cannot quantize an image with non-finite values")
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def save_image(img: ImageTensor, path: Union[str, Path]) -> None:
    """
    Write ``img`` as an 8-bit raster, format chosen from the file suffix.

    Values are clamped to [0, 1] and quantized with ``round(v * 255)``.

    Raises:
        ArgumentError: If the image has non-finite values or 2/4+ channels
        FormatError: If the suffix is not a supported raster format
        ImageIOError: If the path is not writable
    """
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix not in _SUPPORTED_SUFFIXES:
        raise FormatError(f"Unsupported output format {suffix!r} for {path}")
    codes = quantize(img)
    if codes.shape[0] == 1:
        raster = Image.fromarray(codes[0])
    elif codes.shape[0] == 3:
        raster = Image.fromarray(np.ascontiguousarray(codes.transpose(1, 2, 0)))
    else:
        raise ArgumentError(f"Cannot save a {codes.shape[0]}-channel image")
    if suffix == ".pgm" and raster.mode != "L":
        raise FormatError("PGM output requires a single-channel image")
    if suffix == ".ppm" and raster.mode != "RGB":
        raise FormatError("PPM output requires a three-channel image")
    try:
        raster.save(path, format="PNG" if suffix == ".png" else "PPM")
    except OSError as e:
        raise ImageIOError(f"Cannot write image {path}: {e}") from e
    logger.debug(f"Saved image {codes.shape} to {path}")
