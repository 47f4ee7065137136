"""End-to-end anomaly synthesis for one category.

Per sample: draw a (region mode, edge op) strategy from the enabled toggles,
draw a region mask, build the anomaly edge map, render the normal and the
anomaly edge maps with the edge-to-image generator, and derive the
ground-truth mask from the SSIM dissimilarity of the two renderings.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from .edges import extract_edge_map
from .generator import GeneratorModel, generate_batch
from .imaging import DEFAULT_SSIM, SSIMConfig, as_region_mask, ssim_map
from .jnd import compute_jnd
from .manipulation import (AugmentationSpec, EdgeSynthesis, SynthesisStrategy,
                           synthesize_anomaly_edges)
from .regions import (EmptyCandidatesError, RegionPolicy, foreground_restrict,
                      sample_arbitrary_region, sample_semantic_region, semantic_candidates)
from .tps import warp_image


@dataclass(frozen=True)
class StrategyToggles:
    semantic_regions: bool = True
    arbitrary_regions: bool = True
    remove: bool = True
    replace: bool = True
    merge: bool = True
    tps_on_synthetic: bool = False

    def __post_init__(self):
        if not (self.semantic_regions or self.arbitrary_regions):
            raise ValueError("enable at least one region strategy (semantic_regions or arbitrary_regions)")
        if not (self.remove or self.replace or self.merge):
            raise ValueError("enable at least one edge strategy (remove, replace or merge)")

    @property
    def region_modes(self) -> list[str]:
        return [m for m, on in (("semantic", self.semantic_regions), ("arbitrary", self.arbitrary_regions)) if on]

    @property
    def edge_ops(self) -> list[str]:
        return [o for o in ("remove", "replace", "merge") if getattr(self, o)]

    def combinations(self) -> list[tuple[str, str]]:
        return list(itertools.product(self.region_modes, self.edge_ops))


def build_ground_truth(gen_normal, gen_anomaly, region_mask, threshold: float = 0.5,
                       closing: int = 3, ssim_cfg: SSIMConfig = DEFAULT_SSIM) -> np.ndarray:
    """Binary ground truth: ``(1 - SSIM) > threshold``, closed, and kept inside ``region_mask``."""
    m = as_region_mask(region_mask).astype(bool)
    dissim = 1.0 - ssim_map(gen_normal, gen_anomaly, ssim_cfg)
    gt = (dissim > threshold) & m
    if closing > 1 and gt.any():
        gt = ndimage.binary_closing(gt, structure=np.ones((closing, closing), dtype=bool))
    return (gt & m).astype(np.uint8)


@dataclass
class SyntheticSample:
    image: np.ndarray            # generated anomaly image
    anomaly_edges: np.ndarray
    gen_normal: np.ndarray
    gt_mask: np.ndarray
    region_mask: np.ndarray
    strategy: str
    target_image: np.ndarray     # normal image aligned with ``image`` (TPS-warped when used)
    target_edges: np.ndarray
    source_index: int


class AnomalySynthesizer:
    """Synthesizes anomalies for the normal images of one category.

    ``images`` are the sources; ``candidate_edges`` (default: the sources'
    own edge maps) supply replacement and merge edges. The ground truth
    compares the generated anomaly with the generated normal image; set
    ``gt_against_original`` to compare with the source image instead.
    """

    def __init__(self, images: Sequence[np.ndarray], generator: GeneratorModel,
                 toggles: StrategyToggles | None = None,
                 policy: RegionPolicy | None = None,
                 augmentation: AugmentationSpec | None = None,
                 edge_backend=None,
                 candidate_edges: Sequence[np.ndarray] | None = None,
                 semantic_backend: Callable | None = None,
                 max_area_fraction: float = 0.4,
                 tps_probability: float = 0.5,
                 tps_max_shift_frac: float = 0.1,
                 gt_threshold: float = 0.5,
                 gt_against_original: bool = False,
                 edge_maps: Sequence[np.ndarray] | None = None):
        if len(images) == 0:
            raise ValueError("need at least one normal image")
        self.images = [np.asarray(im, dtype=np.float32) for im in images]
        self.generator = generator
        self.toggles = toggles or StrategyToggles()
        self.policy = policy or RegionPolicy()
        self.augmentation = augmentation or AugmentationSpec()
        self.edge_backend = edge_backend
        self.edge_maps = list(edge_maps) if edge_maps is not None else [
            extract_edge_map(im, edge_backend) for im in self.images]
        self.candidate_edges = list(candidate_edges) if candidate_edges is not None else self.edge_maps
        self.semantic_backend = semantic_backend
        self.max_area_fraction = max_area_fraction
        self.tps_probability = tps_probability
        self.tps_max_shift_frac = tps_max_shift_frac
        self.gt_threshold = gt_threshold
        self.gt_against_original = gt_against_original
        self._jnd: dict[int, np.ndarray] = {}
        self._candidates: dict[int, list[np.ndarray] | None] = {}

    def __len__(self) -> int:
        return len(self.images)

    def jnd(self, index: int) -> np.ndarray:
        if index not in self._jnd:
            self._jnd[index] = compute_jnd(self.images[index])
        return self._jnd[index]

    def semantic_regions(self, index: int) -> list[np.ndarray] | None:
        if index not in self._candidates:
            try:
                self._candidates[index] = semantic_candidates(
                    self.images[index], self.edge_maps[index], self.semantic_backend)
            except EmptyCandidatesError:
                self._candidates[index] = None
        return self._candidates[index]

    def draw_strategy(self, rng: np.random.Generator) -> SynthesisStrategy:
        combos = self.toggles.combinations()
        mode, op = combos[int(rng.integers(len(combos)))]
        tps = self.toggles.tps_on_synthetic and rng.random() < self.tps_probability
        return SynthesisStrategy(mode, op, apply_tps=bool(tps))

    def draw_mask(self, index: int, mode: str, rng: np.random.Generator, max_tries: int = 20) -> tuple[np.ndarray, str]:
        """Region mask for ``mode``; re-sampled while it covers more than ``max_area_fraction``.

        Returns the mask and the mode actually used (semantic falls back to
        arbitrary when no candidate region is available).
        """
        h, w = self.images[index].shape[:2]
        cands = self.semantic_regions(index) if mode == "semantic" else None
        if mode == "semantic" and cands:
            cands = [c for c in cands if c.mean() <= self.max_area_fraction] or None
        used = "semantic" if cands else "arbitrary"
        for _ in range(max_tries):
            if used == "semantic":
                m = sample_semantic_region(cands, rng, self.policy.union_probability)
            else:
                m = sample_arbitrary_region(self.policy, h, w, rng)
            if self.policy.foreground_restrict:
                m = foreground_restrict(m, self.jnd(index), self.policy.jnd_threshold)
            if m.mean() <= self.max_area_fraction:
                return m, used
        raise RuntimeError(f"could not draw a region mask under {self.max_area_fraction:.0%} of the frame")

    def synthesize_edges(self, index: int, rng: np.random.Generator) -> EdgeSynthesis:
        strategy = self.draw_strategy(rng)
        mask, used = self.draw_mask(index, strategy.region_mode, rng)
        if used != strategy.region_mode:
            strategy = SynthesisStrategy(used, strategy.edge_op, strategy.apply_tps)
        return synthesize_anomaly_edges(self.edge_maps[index], self.candidate_edges, strategy, mask, rng,
                                        self.augmentation, self.tps_max_shift_frac)

    def synthesize_batch(self, indices: Sequence[int], rng: np.random.Generator) -> list[SyntheticSample]:
        edits = [self.synthesize_edges(int(i), rng) for i in indices]
        if not edits:
            return []
        stack = np.stack([e.normal_edges for e in edits] + [e.anomaly_edges for e in edits])
        rendered = generate_batch(self.generator, stack)
        n = len(edits)
        out = []
        for k, (i, e) in enumerate(zip(indices, edits)):
            gen_normal, gen_anomaly = rendered[k], rendered[n + k]
            target = self.images[int(i)]
            if e.warp is not None:
                target = warp_image(target, e.warp)
            reference = target if self.gt_against_original else gen_normal
            gt = build_ground_truth(reference, gen_anomaly, e.mask, self.gt_threshold)
            out.append(SyntheticSample(gen_anomaly, e.anomaly_edges, gen_normal, gt, e.mask,
                                       e.strategy.tag, target, e.normal_edges, int(i)))
        return out

    def synthesize(self, index: int, rng: np.random.Generator) -> SyntheticSample:
        return self.synthesize_batch([index], rng)[0]
