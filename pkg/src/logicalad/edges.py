"""Multi-scale edge extraction.

Two interchangeable backends produce four full-resolution edge maps per image,
with ``1.0`` meaning background. Scale 0 is the most detailed map and is the
one used for generation and for the edge-reconstruction target.

The classical backend is a Canny-style detector (Gaussian smoothing, Sobel
gradients, non-maximum suppression, hysteresis). Instead of a hard binary
output, kept pixels carry a soft strength so that weak edges land between
0 and 0.5 and strong ones at 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from scipy import ndimage

from .imaging import InvalidInputError, as_edge_map, as_region_mask, to_grayscale

NUM_SCALES = 4


class BackendUnavailableError(RuntimeError):
    pass


@dataclass(frozen=True)
class ClassicalEdgeBackend:
    """Canny-style detector; four scales emulated by four smoothing sigmas.

    Thresholds are absolute, on the Sobel magnitude normalised to intensity
    change per pixel (a unit step has magnitude ~0.5 before smoothing).
    """

    sigmas: tuple[float, ...] = (0.8, 1.4, 2.0, 3.0)
    low_threshold: float = 0.02
    high_threshold: float = 0.06
    kind: str = field(default="classical", init=False)

    def __post_init__(self):
        if len(self.sigmas) != NUM_SCALES:
            raise ValueError(f"need {NUM_SCALES} sigmas, got {len(self.sigmas)}")
        if not 0 < self.low_threshold < self.high_threshold:
            raise ValueError("require 0 < low_threshold < high_threshold")

    def extract(self, img) -> list[np.ndarray]:
        gray = to_grayscale(img).astype(np.float64)
        return [self._single_scale(gray, s) for s in self.sigmas]

    def _single_scale(self, gray: np.ndarray, sigma: float) -> np.ndarray:
        smooth = ndimage.gaussian_filter(gray, sigma, mode="nearest")
        gx = ndimage.sobel(smooth, axis=1, mode="nearest") / 8.0
        gy = ndimage.sobel(smooth, axis=0, mode="nearest") / 8.0
        # rounding makes mirror-symmetric ties exact, so polarity cannot flip the kept side
        mag = np.round(np.hypot(gx, gy), 9)
        thin = non_maximum_suppression(mag, gx, gy)
        keep = hysteresis(thin, self.low_threshold, self.high_threshold)
        strength = np.clip(0.5 + 0.5 * thin / self.high_threshold, 0.0, 1.0)
        out = np.ones_like(gray)
        out[keep] = 1.0 - strength[keep]
        return as_edge_map(out)


def non_maximum_suppression(mag: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Zero every pixel that is not a local maximum across the gradient direction.

    Directions are quantised to 0/45/90/135 degrees. Ties are broken by
    requiring ``>=`` on one side and ``>`` on the other so that a plateau of
    two equal pixels keeps exactly one.
    """
    angle = (np.rad2deg(np.arctan2(gy, gx)) + 180.0) % 180.0
    sector = np.zeros(mag.shape, dtype=np.int8)
    sector[(angle >= 22.5) & (angle < 67.5)] = 1
    sector[(angle >= 67.5) & (angle < 112.5)] = 2
    sector[(angle >= 112.5) & (angle < 157.5)] = 3

    p = np.pad(mag, 1, mode="constant")
    c = p[1:-1, 1:-1]
    # (forward neighbour, backward neighbour) per sector, rows grow downward
    neighbours = {
        0: (p[1:-1, 2:], p[1:-1, :-2]),
        1: (p[2:, 2:], p[:-2, :-2]),
        2: (p[2:, 1:-1], p[:-2, 1:-1]),
        3: (p[2:, :-2], p[:-2, 2:]),
    }
    out = np.zeros_like(mag)
    for s, (fwd, bwd) in neighbours.items():
        sel = (sector == s) & (c >= fwd) & (c > bwd)
        out[sel] = mag[sel]
    return out


def hysteresis(mag: np.ndarray, low: float, high: float) -> np.ndarray:
    """Keep weak pixels (>= low) only if 8-connected to a strong one (>= high)."""
    weak = mag >= low
    labels, n = ndimage.label(weak, structure=np.ones((3, 3), dtype=bool))
    if n == 0:
        return np.zeros(mag.shape, dtype=bool)
    strong_labels = np.unique(labels[(mag >= high) & weak])
    strong_labels = strong_labels[strong_labels > 0]
    return np.isin(labels, strong_labels)


class PretrainedEdgeBackend:
    """Adapter around a TorchScript edge detector with the usual 1 = edge output.

    The module must accept a ``1 x 3 x H x W`` tensor in ``[0, 1]`` and return
    either a list of side outputs or a ``1 x S x H x W`` tensor. Outputs are
    inverted on ingestion so downstream code sees 1 = background.
    """

    kind = "pretrained_adapter"

    def __init__(self, weights_path, device: str = "cpu"):
        path = Path(weights_path)
        if not path.is_file():
            raise BackendUnavailableError(
                f"edge detector weights not found at {path}; "
                "use ClassicalEdgeBackend as the fallback"
            )
        self.device = device
        self.model = torch.jit.load(str(path), map_location=device).eval()

    @torch.no_grad()
    def extract(self, img) -> list[np.ndarray]:
        x = torch.from_numpy(np.ascontiguousarray(np.asarray(img, np.float32).transpose(2, 0, 1)))[None]
        out = self.model(x.to(self.device))
        if isinstance(out, torch.Tensor):
            maps = [out[0, i] for i in range(out.shape[1])]
        else:
            maps = [o[0, 0] if o.ndim == 4 else o[0] for o in out]
        maps = maps[:NUM_SCALES]
        while len(maps) < NUM_SCALES:
            maps.append(maps[-1])
        return [as_edge_map(1.0 - m.clamp(0, 1).cpu().numpy()) for m in maps]


def make_backend(kind: str = "classical", weights_path=None, **params):
    if kind == "classical":
        return ClassicalEdgeBackend(**params)
    if kind == "pretrained_adapter":
        if weights_path is None:
            raise BackendUnavailableError(
                "pretrained edge backend needs weights_path; use kind='classical' as the fallback"
            )
        return PretrainedEdgeBackend(weights_path, **params)
    raise ValueError(f"unknown edge backend {kind!r}")


def extract_edges(img, backend=None) -> list[np.ndarray]:
    """Return ``NUM_SCALES`` edge maps for ``img``; index 0 is the most detailed."""
    backend = backend or ClassicalEdgeBackend()
    maps = backend.extract(img)
    if len(maps) != NUM_SCALES:
        raise RuntimeError(f"backend returned {len(maps)} scales, expected {NUM_SCALES}")
    return maps


def extract_edge_map(img, backend=None) -> np.ndarray:
    """Scale-0 edge map, the one consumed downstream."""
    return extract_edges(img, backend)[0]


def binarize_edges(edge_map, threshold: float = 0.5) -> np.ndarray:
    if not 0.0 < threshold < 1.0:
        raise InvalidInputError(f"threshold must lie in (0, 1), got {threshold}")
    return as_region_mask(np.asarray(edge_map) < threshold)


def extract_batch(images: Sequence[np.ndarray], backend=None) -> np.ndarray:
    return np.stack([extract_edge_map(im, backend) for im in images])
