"""Spatial just-noticeable-distortion (JND) map.

Classical pixel-domain model: a background-luminance adaptation threshold
and a texture-masking threshold driven by the maximum directional gradient,
combined by an elementwise maximum. Both terms are evaluated on the 0-255
luma scale, then normalised.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .imaging import to_grayscale

# weighted 5x5 low-pass for background luminance (centre excluded)
_BACKGROUND = np.array([
    [1, 1, 1, 1, 1],
    [1, 2, 2, 2, 1],
    [1, 2, 0, 2, 1],
    [1, 2, 2, 2, 1],
    [1, 1, 1, 1, 1],
], dtype=np.float64) / 32.0

# four directional high-pass operators
_G1 = np.array([
    [0, 0, 0, 0, 0],
    [1, 3, 8, 3, 1],
    [0, 0, 0, 0, 0],
    [-1, -3, -8, -3, -1],
    [0, 0, 0, 0, 0],
], dtype=np.float64)
_G2 = np.array([
    [0, 0, 1, 0, 0],
    [0, 8, 3, 0, 0],
    [1, 3, 0, -3, -1],
    [0, 0, -3, -8, 0],
    [0, 0, -1, 0, 0],
], dtype=np.float64)
_GRADIENTS = (_G1, _G2, _G2.T[:, ::-1].copy(), _G1.T.copy())

TEXTURE_WEIGHT = 0.117
# largest raw value the model can emit on 0-255 input, used by fixed normalisation
FIXED_RANGE = 255.0


def background_luminance(luma255: np.ndarray) -> np.ndarray:
    return ndimage.correlate(luma255, _BACKGROUND, mode="reflect")


def max_gradient(luma255: np.ndarray) -> np.ndarray:
    g = [np.abs(ndimage.correlate(luma255, k, mode="reflect")) / 16.0 for k in _GRADIENTS]
    return np.max(g, axis=0)


def luminance_adaptation(bg: np.ndarray) -> np.ndarray:
    """Visibility threshold as a function of background luminance (0-255)."""
    dark = 17.0 * (1.0 - np.sqrt(np.clip(bg, 0.0, None) / 127.0)) + 3.0
    bright = 3.0 / 128.0 * (bg - 127.0) + 3.0
    return np.where(bg <= 127.0, dark, bright)


def texture_masking(luma255: np.ndarray) -> np.ndarray:
    return TEXTURE_WEIGHT * max_gradient(luma255)


def raw_jnd(img) -> np.ndarray:
    luma = to_grayscale(img).astype(np.float64) * 255.0
    return np.maximum(luminance_adaptation(background_luminance(luma)), texture_masking(luma))


def compute_jnd(img, normalization: str = "minmax") -> np.ndarray:
    """JND map in ``[0, 1]``.

    ``normalization``: ``"minmax"`` rescales each image to span ``[0, 1]``
    (a constant raw map becomes all zeros); ``"fixed"`` divides by a fixed
    range so maps are comparable across images.
    """
    raw = raw_jnd(img)
    if normalization == "minmax":
        lo, hi = raw.min(), raw.max()
        if hi - lo < 1e-12:
            return np.zeros_like(raw, dtype=np.float32)
        return ((raw - lo) / (hi - lo)).astype(np.float32)
    if normalization == "fixed":
        return np.clip(raw / FIXED_RANGE, 0.0, 1.0).astype(np.float32)
    raise ValueError(f"unknown normalization {normalization!r}")
