"""Score-map overlays for inspection."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .imaging import InvalidInputError, as_image

HEAT_COLOR = np.array([1.0, 0.1, 0.0])
CONTOUR_COLOR = np.array([0.0, 1.0, 0.0])


def contour(mask) -> np.ndarray:
    """Inner boundary pixels of a binary mask."""
    m = np.asarray(mask).astype(bool)
    if not m.any():
        return m
    return m & ~ndimage.binary_erosion(m, structure=np.ones((3, 3), bool), border_value=0)


def overlay(image, score_map, gt=None, alpha: float = 0.6, reconstruction=None) -> np.ndarray:
    """Blend a heat layer over ``image`` and draw the GT contour.

    A pixel with score ``s`` moves toward :data:`HEAT_COLOR` by ``alpha * s``,
    so a zero map leaves the image untouched and a saturated map shows the
    heat layer at opacity ``alpha``. When ``reconstruction`` is given it is
    placed to the right of the overlay.
    """
    img = as_image(image, min_side=1).astype(np.float64)
    s = np.asarray(score_map, dtype=np.float64)
    if s.shape != img.shape[:2]:
        raise InvalidInputError(f"score map {s.shape} does not match image {img.shape[:2]}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    w = alpha * np.clip(s, 0.0, 1.0)[..., None]
    out = (1.0 - w) * img + w * HEAT_COLOR
    if gt is not None:
        g = np.asarray(gt)
        if g.shape != img.shape[:2]:
            raise InvalidInputError(f"ground truth {g.shape} does not match image {img.shape[:2]}")
        out[contour(g > 0)] = CONTOUR_COLOR
    if reconstruction is not None:
        rec = as_image(reconstruction, min_side=1).astype(np.float64)
        if rec.shape != img.shape:
            raise InvalidInputError(f"reconstruction {rec.shape} does not match image {img.shape}")
        out = np.concatenate([out, rec], axis=1)
    return out.astype(np.float32)
