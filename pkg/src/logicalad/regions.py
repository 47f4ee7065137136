"""Region masks that decide where edges get manipulated.

Semantic regions come from segment proposals (a promptable segmenter when
available, otherwise connected components of the edge map) refined into a
set of disjoint candidate regions. Arbitrary regions are unions of random
rectangles, ellipses and convex polygons. Both can be restricted to the
foreground estimated from the JND map.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from .edges import binarize_edges
from .imaging import as_region_mask

SHAPES = ("rectangle", "ellipse", "polygon")
MIN_SHAPE_SIDE = 8


class EmptyCandidatesError(ValueError):
    """No usable semantic region survived refinement; fall back to arbitrary mode."""


@dataclass(frozen=True)
class SegmentProposal:
    mask: np.ndarray
    source: str = "semantic_backend"

    def __post_init__(self):
        m = as_region_mask(self.mask)
        if not m.any():
            raise ValueError("segment proposal must have positive area")
        object.__setattr__(self, "mask", m)

    @property
    def area(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True)
class RefinementConfig:
    border_fraction: float = 0.5
    max_area_fraction: float = 0.9
    small_area_fraction: float = 0.01
    merge_iou: float = 0.3


@dataclass(frozen=True)
class RegionPolicy:
    mode: str = "arbitrary"
    count_range: tuple[int, int] = (3, 3)
    area_fraction_range: tuple[float, float] = (0.02, 0.10)
    aspect_ratio_range: tuple[float, float] = (0.3, 3.0)
    shape_set: tuple[str, ...] = SHAPES
    foreground_restrict: bool = False
    jnd_threshold: float | None = None  # None: 60th percentile of the JND map
    union_probability: float = 0.0  # semantic mode: chance of joining two candidates

    def __post_init__(self):
        if self.mode not in ("semantic", "arbitrary"):
            raise ValueError(f"mode must be 'semantic' or 'arbitrary', got {self.mode!r}")
        lo, hi = self.count_range
        if not 1 <= lo <= hi:
            raise ValueError(f"invalid count_range {self.count_range}")
        lo, hi = self.area_fraction_range
        if not 0.0 < lo <= hi < 1.0:
            raise ValueError(f"area fractions must lie in (0, 1), got {self.area_fraction_range}")
        lo, hi = self.aspect_ratio_range
        if not 0.0 < lo <= hi:
            raise ValueError(f"invalid aspect_ratio_range {self.aspect_ratio_range}")
        if not self.shape_set or set(self.shape_set) - set(SHAPES):
            raise ValueError(f"shape_set must be a non-empty subset of {SHAPES}")


# --- semantic regions --------------------------------------------------------

def _border_touch_fraction(mask: np.ndarray) -> float:
    border = np.concatenate([mask[0, :], mask[-1, :], mask[1:-1, 0], mask[1:-1, -1]])
    return float(border.mean())


def _iou(a: np.ndarray, b: np.ndarray) -> float:
    union = np.logical_or(a, b).sum()
    return float(np.logical_and(a, b).sum() / union) if union else 0.0


def _centroid(mask: np.ndarray) -> np.ndarray:
    return np.argwhere(mask).mean(axis=0)


def _raster_key(mask: np.ndarray) -> int:
    return int(np.flatnonzero(mask.ravel())[0])


def refine_semantic_regions(proposals: Sequence[SegmentProposal], img=None,
                            cfg: RefinementConfig | None = None) -> list[np.ndarray]:
    """Turn over-segmented proposals into disjoint candidate regions.

    Steps: drop background (touches at least ``border_fraction`` of the frame
    border or covers more than ``max_area_fraction``), union pairs whose IoU
    exceeds ``merge_iou`` until none remain, hand any residual overlap to the
    smaller region, then absorb small regions into the nearest larger one by
    centroid distance. Output is sorted by first pixel in raster order.
    """
    cfg = cfg or RefinementConfig()
    if not proposals:
        raise ValueError("need at least one proposal")
    frame = proposals[0].mask.size
    masks = [
        p.mask.astype(bool) for p in proposals
        if _border_touch_fraction(p.mask) < cfg.border_fraction and p.area <= cfg.max_area_fraction * frame
    ]
    if not masks:
        raise EmptyCandidatesError("every proposal was classified as background")

    merged = True
    while merged:
        merged = False
        for i in range(len(masks)):
            for j in range(i + 1, len(masks)):
                if _iou(masks[i], masks[j]) > cfg.merge_iou:
                    masks[i] = masks[i] | masks.pop(j)
                    merged = True
                    break
            if merged:
                break

    # shared boundary pixels go to the smaller (enclosed) region
    masks.sort(key=lambda m: int(m.sum()))
    claimed = np.zeros_like(masks[0])
    disjoint = []
    for m in masks:
        m = m & ~claimed
        if m.any():
            disjoint.append(m)
            claimed |= m

    small_limit = cfg.small_area_fraction * frame
    large = [m for m in disjoint if m.sum() >= small_limit]
    small = [m for m in disjoint if m.sum() < small_limit]
    if not large:
        grouped = np.zeros_like(disjoint[0])
        for m in small:
            grouped |= m
        large = [grouped]
    else:
        centroids = [_centroid(m) for m in large]
        for m in small:
            c = _centroid(m)
            k = int(np.argmin([np.sum((c - cl) ** 2) for cl in centroids]))
            large[k] = large[k] | m

    large.sort(key=_raster_key)
    return [as_region_mask(m) for m in large]


def proposals_from_edges(edge_map, threshold: float = 0.5, min_area: int = 4) -> list[SegmentProposal]:
    """Fallback region source: 4-connected components of the non-edge pixels."""
    edges = binarize_edges(edge_map, threshold).astype(bool)
    labels, n = ndimage.label(~edges)
    out = []
    for k in range(1, n + 1):
        m = labels == k
        if m.sum() >= min_area:
            # give the region back its bounding edge pixels
            m = ndimage.binary_dilation(m) & (m | edges)
            out.append(SegmentProposal(m, source="connected_components"))
    return out


def semantic_candidates(img, edge_map, backend: Callable | None = None,
                        cfg: RefinementConfig | None = None) -> list[np.ndarray]:
    """Candidate regions from ``backend(img) -> list of masks`` or the edge fallback."""
    if backend is not None:
        proposals = [SegmentProposal(m) for m in backend(img) if np.any(m)]
    else:
        proposals = proposals_from_edges(edge_map)
    if not proposals:
        raise EmptyCandidatesError("region source produced no proposals")
    return refine_semantic_regions(proposals, img, cfg)


def sample_semantic_region(candidates: Sequence[np.ndarray], rng: np.random.Generator,
                           union_probability: float = 0.0) -> np.ndarray:
    if not candidates:
        raise EmptyCandidatesError("no candidate regions")
    i = int(rng.integers(len(candidates)))
    mask = np.asarray(candidates[i], dtype=np.uint8)
    if len(candidates) > 1 and union_probability > 0 and rng.random() < union_probability:
        j = int(rng.integers(len(candidates) - 1))
        j += j >= i
        mask = mask | np.asarray(candidates[j], dtype=np.uint8)
    return as_region_mask(mask, allow_empty=False)


# --- arbitrary regions -------------------------------------------------------

def _polygon_angles(rng: np.random.Generator) -> np.ndarray:
    k = int(rng.integers(5, 9))
    # jittered even spacing keeps the polygon convex and around its centre
    step = 2 * np.pi / k
    return np.arange(k) * step + rng.uniform(-0.4, 0.4, k) * step + rng.uniform(0.0, step)


def _rasterize(shape: str, h: int, w: int, cy: float, cx: float, sh: float, sw: float,
               angles: np.ndarray | None = None) -> np.ndarray:
    ys, xs = np.mgrid[0:h, 0:w]
    if shape == "rectangle":
        top, left = int(round(cy - sh / 2)), int(round(cx - sw / 2))
        m = np.zeros((h, w), dtype=bool)
        m[max(top, 0):max(top + int(sh), 0), max(left, 0):max(left + int(sw), 0)] = True
        return m
    # pixel centres sit at integer coordinates, so the shape spans [c - s/2, c + s/2)
    u = (ys + 0.5 - cy) / (sh / 2)
    v = (xs + 0.5 - cx) / (sw / 2)
    if shape == "ellipse":
        return u * u + v * v <= 1.0
    px, py = np.cos(angles), np.sin(angles)
    inside = np.ones((h, w), dtype=bool)
    for a in range(len(angles)):
        b = (a + 1) % len(angles)
        # left of each counter-clockwise edge
        cross = (px[b] - px[a]) * (u - py[a]) - (py[b] - py[a]) * (v - px[a])
        inside &= cross >= 0
    return inside


def _place(kind: str, height: int, width: int, sh: float, sw: float, uy: float, ux: float,
           angles: np.ndarray | None) -> np.ndarray:
    if kind == "rectangle":
        sh, sw = max(float(np.floor(sh + 1e-9)), 1.0), max(float(np.floor(sw + 1e-9)), 1.0)
    sh, sw = min(sh, height), min(sw, width)
    cy = sh / 2 + uy * (height - sh)
    cx = sw / 2 + ux * (width - sw)
    return _rasterize(kind, height, width, cy, cx, sh, sw, angles)


def sample_arbitrary_shapes(policy: RegionPolicy, height: int, width: int,
                            rng: np.random.Generator) -> list[np.ndarray]:
    """Individual shape masks whose union is the arbitrary region.

    Each shape is placed fully inside the frame and its pixel area lies in
    ``area_fraction_range * H * W``. Rasterisation can miss the drawn target
    area, so the shape is rescaled until its pixel count falls in range.
    """
    if min(height, width) < MIN_SHAPE_SIDE:
        raise ValueError(f"image {height}x{width} is smaller than the minimum shape side {MIN_SHAPE_SIDE}")
    frame = height * width
    lo_c, hi_c = policy.count_range
    count = int(rng.integers(lo_c, hi_c + 1))
    min_px = policy.area_fraction_range[0] * frame
    max_px = policy.area_fraction_range[1] * frame
    shapes = []
    for _ in range(count):
        kind = policy.shape_set[int(rng.integers(len(policy.shape_set)))]
        frac = float(rng.uniform(*policy.area_fraction_range))
        log_lo, log_hi = np.log(policy.aspect_ratio_range)
        aspect = float(np.exp(rng.uniform(log_lo, log_hi)))  # width / height
        uy, ux = rng.uniform(0.0, 1.0, 2)
        angles = _polygon_angles(rng) if kind == "polygon" else None
        target = frac * frame
        if kind == "ellipse":
            target *= 4.0 / np.pi  # bounding box of an ellipse with the target area
        elif kind == "polygon":
            target *= 2.0
        sh = min(np.sqrt(target / aspect), height)
        sw = min(target / sh, width)
        m = _place(kind, height, width, sh, sw, uy, ux, angles)
        for _ in range(200):
            area = m.sum()
            if area > max_px:
                sh, sw = sh * 0.97, sw * 0.97
            elif area < min_px and (sh < height or sw < width):
                sh, sw = min(sh * 1.03 + 0.01, height), min(sw * 1.03 + 0.01, width)
            else:
                break
            m = _place(kind, height, width, sh, sw, uy, ux, angles)
        while m.sum() > max_px:
            # a range too narrow to hit exactly: the upper bound wins
            sh, sw = sh * 0.97, sw * 0.97
            m = _place(kind, height, width, sh, sw, uy, ux, angles)
        if not m.any():
            m[min(int(height * uy), height - 1), min(int(width * ux), width - 1)] = True
        shapes.append(m)
    return shapes


def sample_arbitrary_region(policy: RegionPolicy, height: int, width: int,
                            rng: np.random.Generator) -> np.ndarray:
    shapes = sample_arbitrary_shapes(policy, height, width, rng)
    out = np.zeros((height, width), dtype=bool)
    for m in shapes:
        out |= m
    return as_region_mask(out, allow_empty=False)


# --- foreground restriction --------------------------------------------------

def foreground_restrict(mask, jnd, threshold: float | None = None) -> np.ndarray:
    """Intersect ``mask`` with the JND foreground ``jnd > threshold``.

    If the intersection is empty the original mask is kept, so the region
    still covers part of the object and the synthetic image stays consistent.
    """
    m = as_region_mask(mask)
    jnd = np.asarray(jnd)
    if jnd.shape != m.shape:
        raise ValueError(f"shape mismatch: mask {m.shape} vs jnd {jnd.shape}")
    if threshold is None:
        threshold = float(np.percentile(jnd, 60))
    restricted = m & (jnd > threshold)
    return as_region_mask(restricted) if restricted.any() else m
