"""
Image Quality Metrics

PSNR and SSIM for images on the [0, 1] scale (peak 1.0).
"""

import numpy as np
from skimage.metrics import structural_similarity

from ..errors import ArgumentError
from .image import ImageTensor, as_image, check_same_shape

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def psnr(a: ImageTensor, b: ImageTensor) -> float:
    """
    Peak signal-to-noise ratio in dB with peak 1.0, capped at 100 dB.

    Raises:
        ArgumentError: If the shapes differ
    """
    a, b = as_image(a), as_image(b)
    check_same_shape(a, b, "PSNR inputs")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(1.0 / mse))


def ssim(a: ImageTensor, b: ImageTensor) -> float:
    """
    Mean SSIM over pixels and channels.

    Uses an 11x11 Gaussian window (sigma 1.5), population statistics and the
    stability constants (0.01)^2 and (0.03)^2 for peak 1.0.

    Raises:
        ArgumentError: If the shapes differ or the image is smaller than the window
    """
    a, b = as_image(a), as_image(b)
    check_same_shape(a, b, "SSIM inputs")
    _, height, width = a.shape
    if height < SSIM_WINDOW or width < SSIM_WINDOW:
        raise ArgumentError(
            f"SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, "
            f"got {height}x{width}"
        )
    scores = [
        structural_similarity(
            a[c],
            b[c],
            data_range=1.0,
            gaussian_weights=True,
            sigma=SSIM_SIGMA,
            use_sample_covariance=False,
            K1=0.01,
            K2=0.03,
        )
        for c in range(a.shape[0])
    ]
    return float(np.mean(scores))
