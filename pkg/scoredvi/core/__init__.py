"""
ScoreDVI Image Core

Image tensors, pixel-shuffle downsampling, raster and SDVI1 I/O, and quality
metrics.
"""

from .image import (
    ImageTensor,
    SubImageGrid,
    as_image,
    check_same_shape,
    load_image,
    pd_down,
    save_image,
)
from .metrics import psnr, ssim
from .tensorio import decode_tensor, encode_tensor, read_tensor, write_tensor

__all__ = [
    "ImageTensor",
    "SubImageGrid",
    "as_image",
    "check_same_shape",
    "load_image",
    "pd_down",
    "save_image",
    "psnr",
    "ssim",
    "encode_tensor",
    "decode_tensor",
    "read_tensor",
    "write_tensor",
]
