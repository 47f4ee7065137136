"""Anomaly edge construction by removing, replacing or merging edges in a region.

With ``E`` a normal edge map (1 = background), ``C`` an augmented candidate
edge map from another normal image of the same category and ``M`` the region
mask, the three operations are::

    remove   M + (1 - M) * E
    replace  M * C + (1 - M) * E
    merge    clamp01(M * (C + E - 1)) + (1 - M) * E

The merge sum goes negative wherever both maps carry edges; clamping at zero
turns it into a union of the two edge sets inside ``M``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from .imaging import InvalidInputError, as_edge_map, as_region_mask
from .tps import TPSWarp, warp_edge_map, warp_mask

EDGE_OPS = ("remove", "replace", "merge")
REGION_MODES = ("semantic", "arbitrary")


def _check_pair(edge_map: np.ndarray, mask: np.ndarray, other: np.ndarray | None = None) -> None:
    if edge_map.shape != mask.shape or (other is not None and other.shape != edge_map.shape):
        shapes = [edge_map.shape, mask.shape] + ([other.shape] if other is not None else [])
        raise InvalidInputError(f"shape mismatch: {shapes}")


def _as_float64(edge_map, candidate, mask):
    # float64 keeps (c + e) - 1 exact for float32 inputs, so identity cases hold bitwise
    e = as_edge_map(edge_map).astype(np.float64)
    c = as_edge_map(candidate).astype(np.float64)
    m = as_region_mask(mask).astype(np.float64)
    _check_pair(e, m, c)
    return e, c, m


def remove_edges(edge_map, mask) -> np.ndarray:
    e = as_edge_map(edge_map).astype(np.float64)
    m = as_region_mask(mask).astype(np.float64)
    _check_pair(e, m)
    return (m + (1.0 - m) * e).astype(np.float32)


def replace_edges(edge_map, candidate, mask) -> np.ndarray:
    e, c, m = _as_float64(edge_map, candidate, mask)
    return (m * c + (1.0 - m) * e).astype(np.float32)


def merge_edges(edge_map, candidate, mask) -> np.ndarray:
    e, c, m = _as_float64(edge_map, candidate, mask)
    return (np.clip(m * ((c + e) - 1.0), 0.0, 1.0) + (1.0 - m) * e).astype(np.float32)


# --- candidate augmentation ------------------------------------------------

@dataclass(frozen=True)
class AugmentationSpec:
    ops: tuple[str, ...] = ("horizontal_flip", "vertical_flip", "resize")
    resize_scale_range: tuple[float, float] = (0.75, 1.5)
    op_probability: float = 0.5

    def __post_init__(self):
        unknown = set(self.ops) - {"horizontal_flip", "vertical_flip", "resize"}
        if unknown:
            raise ValueError(f"unknown augmentation ops {sorted(unknown)}")
        lo, hi = self.resize_scale_range
        if not 0 < lo <= hi:
            raise ValueError(f"invalid resize_scale_range {self.resize_scale_range}")
        if not 0.0 <= self.op_probability <= 1.0:
            raise ValueError("op_probability must lie in [0, 1]")


def resize_about_center(edge_map, scale: float) -> np.ndarray:
    """Zoom by ``scale`` around the image centre, keeping the shape.

    Shrinking pads with background (1.0); enlarging centre-crops.
    """
    e = np.asarray(edge_map, dtype=np.float64)
    if scale == 1.0:
        return e.astype(np.float32)
    center = (np.asarray(e.shape, dtype=np.float64) - 1.0) / 2.0
    inv = 1.0 / scale
    offset = center - inv * center
    out = ndimage.affine_transform(e, np.diag([inv, inv]), offset=offset, order=1,
                                   mode="constant", cval=1.0)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def apply_augmentation(edge_map, hflip: bool = False, vflip: bool = False, scale: float = 1.0) -> np.ndarray:
    out = np.asarray(edge_map, dtype=np.float32)
    if hflip:
        out = out[:, ::-1]
    if vflip:
        out = out[::-1, :]
    if scale != 1.0:
        out = resize_about_center(out, scale)
    return np.ascontiguousarray(out)


def augment_candidate(edge_map, spec: AugmentationSpec, rng: np.random.Generator) -> np.ndarray:
    """Random flip/resize of a candidate edge map; every op may be skipped."""
    hflip = "horizontal_flip" in spec.ops and rng.random() < spec.op_probability
    vflip = "vertical_flip" in spec.ops and rng.random() < spec.op_probability
    scale = 1.0
    if "resize" in spec.ops and rng.random() < spec.op_probability:
        scale = float(rng.uniform(*spec.resize_scale_range))
    return as_edge_map(apply_augmentation(edge_map, hflip, vflip, scale))


# --- strategy dispatch -------------------------------------------------------

@dataclass(frozen=True)
class SynthesisStrategy:
    region_mode: str
    edge_op: str
    apply_tps: bool = False
    intended_label: str = field(default="")

    def __post_init__(self):
        if self.region_mode not in REGION_MODES:
            raise ValueError(f"region_mode must be one of {REGION_MODES}, got {self.region_mode!r}")
        if self.edge_op not in EDGE_OPS:
            raise ValueError(f"edge_op must be one of {EDGE_OPS}, got {self.edge_op!r}")
        if not self.intended_label:
            # semantic removal/replacement breaks component constraints; arbitrary regions mostly fake defects
            label = "logical" if self.region_mode == "semantic" else "structural"
            if self.edge_op == "merge":
                label = "mixed"
            object.__setattr__(self, "intended_label", label)
        elif self.intended_label not in ("logical", "structural", "mixed"):
            raise ValueError(f"invalid intended_label {self.intended_label!r}")

    @property
    def tag(self) -> str:
        return f"{self.region_mode}-{self.edge_op}" + ("-tps" if self.apply_tps else "")


@dataclass
class EdgeSynthesis:
    """Result of one edge manipulation.

    ``normal_edges`` is the source map after the optional TPS warp, so that
    the generated normal and anomaly images stay comparable pixel by pixel.
    """

    anomaly_edges: np.ndarray
    normal_edges: np.ndarray
    mask: np.ndarray
    strategy: SynthesisStrategy
    warp: TPSWarp | None = None
    candidate_index: int | None = None


def synthesize_anomaly_edges(edge_map, candidates: Sequence[np.ndarray], strategy: SynthesisStrategy,
                             mask, rng: np.random.Generator,
                             augmentation: AugmentationSpec | None = None,
                             tps_max_shift_frac: float = 0.1,
                             tps_smoothing: float = 0.0) -> EdgeSynthesis:
    """Build the anomaly edge map for one normal edge map and region mask."""
    e = as_edge_map(edge_map)
    m = as_region_mask(mask)
    _check_pair(e, m)
    augmentation = augmentation or AugmentationSpec()
    idx = None
    if strategy.edge_op == "remove":
        out = remove_edges(e, m)
    else:
        if len(candidates) == 0:
            raise ValueError(f"edge op {strategy.edge_op!r} needs at least one candidate edge map")
        idx = int(rng.integers(len(candidates)))
        cand = augment_candidate(candidates[idx], augmentation, rng)
        if strategy.edge_op == "replace":
            out = replace_edges(e, cand, m)
        else:
            out = merge_edges(e, cand, m)

    warp = None
    normal = e
    if strategy.apply_tps:
        h, w = e.shape
        warp = TPSWarp.random(h, w, rng, max_shift_frac=tps_max_shift_frac, smoothing=tps_smoothing)
        out = warp_edge_map(out, warp)
        normal = warp_edge_map(e, warp)
        m = warp_mask(m, warp)
    return EdgeSynthesis(as_edge_map(out), normal, as_region_mask(m), strategy, warp, idx)
