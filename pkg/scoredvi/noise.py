"""
Noise Level Estimation

Estimates the average noise standard deviation of a single noisy image from
weak-texture patches of its pixel-shuffle sub-images, and maps it onto the
prior-assignment weight used to scale the prior term of the loss.
"""

import logging
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.ndimage import uniform_filter

from .core.image import ImageTensor, as_image, pd_down
from .errors import ArgumentError

logger = logging.getLogger(__name__)

PD_STRIDE = 4
PATCH_SIZE = 8
PATCH_STEP = 4
MIN_SIZE = 32
# var(n - box3x3(n)) = (72/81) var(n) for white n
BOX_RESIDUAL_CORRECTION = float(np.sqrt(81.0 / 72.0))


@dataclass
class NoiseEstimate:
    """
    Attributes:
        delta: Noise standard deviation on the 0-255 scale
        patch_count: Number of weak-texture patches that contributed
        sub_medians: Per-channel, per-sub-image median patch std, shape (C, stride**2)
    """

    delta: float
    patch_count: int
    sub_medians: np.ndarray


def _patch_windows(array: np.ndarray) -> np.ndarray:
    windows = sliding_window_view(array, (PATCH_SIZE, PATCH_SIZE))
    return windows[::PATCH_STEP, ::PATCH_STEP].reshape(-1, PATCH_SIZE, PATCH_SIZE)


def _sub_image_median(sub: np.ndarray) -> tuple:
    patches = _patch_windows(sub)
    residual = _patch_windows(sub - uniform_filter(sub, size=3, mode="reflect"))

    texture = np.abs(np.diff(patches, axis=2)).mean(axis=(1, 2)) + np.abs(
        np.diff(patches, axis=1)
    ).mean(axis=(1, 2))
    # <= keeps every patch of a perfectly flat sub-image
    keep = texture <= np.median(texture)

    interior = residual[keep][:, 1:-1, 1:-1].reshape(int(keep.sum()), -1)
    stds = interior.std(axis=1, ddof=1) * BOX_RESIDUAL_CORRECTION
    return float(np.median(stds)), int(keep.sum())


def estimate_delta(y: ImageTensor) -> NoiseEstimate:
    """
    Estimate the noise standard deviation of ``y`` on the 0-255 scale.

    Each channel is split into 16 pixel-shuffle sub-images (stride 4), which
    breaks up spatial correlation in the noise. In every sub-image 8x8 patches
    are taken at stride 4, patches with texture at or below the median are
    kept, and their high-pass residual std gives the per-patch noise level.

    Args:
        y: Noisy image with values in [0, 1]

    Returns:
        NoiseEstimate with the channel- and sub-image-averaged median

    Raises:
        ArgumentError: If the image is smaller than 32x32
    """
    y = as_image(y)
    channels, height, width = y.shape
    if height < MIN_SIZE or width < MIN_SIZE:
        raise ArgumentError(
            f"Noise estimation needs at least {MIN_SIZE}x{MIN_SIZE} pixels, "
            f"got {height}x{width}"
        )

    grid = pd_down(y, PD_STRIDE)
    medians = np.zeros((channels, len(grid.subs)))
    patch_count = 0
    for index, sub in enumerate(grid.subs):
        for c in range(channels):
            medians[c, index], kept = _sub_image_median(sub[c])
            patch_count += kept

    delta = 255.0 * float(medians.mean())
    logger.debug(f"Noise estimate {delta:.3f} from {patch_count} patches")
    return NoiseEstimate(delta=delta, patch_count=patch_count, sub_medians=medians)


def lambda_weight(delta: float, l1: float = 10.0, l2: float = 25.0, gamma: float = 2.0) -> float:
    """
    Prior-assignment weight for noise level ``delta`` (0-255 scale).

    1/gamma below ``l1``, 1 on [l1, l2), gamma from ``l2`` upward.
    """
    if not l1 < l2:
        raise ArgumentError(f"lambda thresholds need l1 < l2, got {l1}, {l2}")
    if gamma < 1:
        raise ArgumentError(f"gamma must be at least 1, got {gamma}")
    if delta < l1:
        return 1.0 / gamma
    if delta < l2:
        return 1.0
    return float(gamma)
