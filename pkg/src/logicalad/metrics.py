"""Image- and pixel-level anomaly metrics: AUROC, AP, PRO/sPRO and AU-sPRO.

The saturated per-region overlap of a ground-truth region at threshold ``t``
is ``min(overlap(t) / saturation_area, 1)``. With the saturation area equal
to the region area it is the classical per-region overlap (PRO).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage
from scipy.stats import rankdata

MAX_THRESHOLDS = 4096


class UndefinedMetricError(ValueError):
    pass


# --- ranking metrics ---------------------------------------------------------

def _flat(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    if s.shape != y.shape:
        raise ValueError(f"scores and labels differ in size: {s.size} vs {y.size}")
    return s, y


def auroc(scores, labels) -> float:
    """Area under the ROC curve as the Mann-Whitney statistic (ties count 1/2)."""
    s, y = _flat(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs both positive and negative samples")
    ranks = rankdata(s)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def average_precision(scores, labels) -> float:
    """Step-interpolated area under precision-recall; tied scores form one step."""
    s, y = _flat(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise UndefinedMetricError("average precision needs at least one positive")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    tp = np.cumsum(y)
    fp = np.cumsum(~y)
    # last index of each run of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp, fp = tp[ends], fp[ends]
    precision = tp / (tp + fp)
    recall = tp / n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


# --- ground-truth regions ----------------------------------------------------

@dataclass(frozen=True)
class GTRegion:
    mask: np.ndarray
    saturation_area: float

    def __post_init__(self):
        if self.saturation_area <= 0:
            raise ValueError("saturation_area must be positive")


def regions_from_mask(mask, saturation_fraction: float = 1.0) -> list[GTRegion]:
    """8-connected components of ``mask``, each saturating at ``fraction * area``."""
    m = np.asarray(mask).astype(bool)
    labels, n = ndimage.label(m, structure=np.ones((3, 3), dtype=bool))
    out = []
    for k in range(1, n + 1):
        r = labels == k
        out.append(GTRegion(r, saturation_fraction * float(r.sum())))
    return out


def _regions_of(gt) -> tuple[np.ndarray, list[GTRegion]]:
    """Accept a plain mask or an object with ``mask`` and ``regions`` attributes."""
    if gt is None:
        return None, []
    if hasattr(gt, "regions"):
        return np.asarray(gt.mask).astype(bool), list(gt.regions)
    m = np.asarray(gt).astype(bool)
    return m, regions_from_mask(m)


@dataclass
class SPROCurve:
    fpr: np.ndarray
    spro: np.ndarray
    thresholds: np.ndarray

    def __iter__(self):
        return iter(zip(self.fpr.tolist(), self.spro.tolist()))

    def __len__(self):
        return len(self.fpr)


def select_thresholds(scores: np.ndarray, max_thresholds: int = MAX_THRESHOLDS) -> np.ndarray:
    """Descending thresholds: every distinct score, or quantiles when there are too many."""
    distinct = np.unique(scores)
    if distinct.size > max_thresholds:
        distinct = np.unique(np.quantile(scores, np.linspace(0.0, 1.0, max_thresholds)))
    return distinct[::-1]


def _count_ge(sorted_vals: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    return sorted_vals.size - np.searchsorted(sorted_vals, thresholds, side="left")


def spro_curve(score_maps: Sequence[np.ndarray], gts: Sequence, max_thresholds: int = MAX_THRESHOLDS) -> SPROCurve:
    """FPR / mean-sPRO pairs for a descending sweep of thresholds.

    A pixel is predicted anomalous when its score is ``>= t``. The first point
    is the empty prediction ``(0, 0)``. FPR is taken over all pixels outside
    every ground-truth mask; sPRO is averaged over all regions in the set.
    """
    if len(score_maps) != len(gts):
        raise ValueError("need one ground truth per score map")
    neg_scores = []
    regions_scores = []
    saturation = []
    all_scores = []
    for smap, gt in zip(score_maps, gts):
        smap = np.asarray(smap, dtype=np.float64)
        all_scores.append(smap.ravel())
        mask, regions = _regions_of(gt)
        if mask is None:
            neg_scores.append(smap.ravel())
            continue
        if mask.shape != smap.shape:
            raise ValueError(f"score map {smap.shape} and mask {mask.shape} differ")
        neg_scores.append(smap[~mask])
        for r in regions:
            regions_scores.append(np.sort(smap[np.asarray(r.mask, dtype=bool)]))
            saturation.append(min(float(r.saturation_area), float(np.asarray(r.mask).sum())))
    if not regions_scores:
        raise UndefinedMetricError("sPRO needs at least one ground-truth region")
    neg = np.sort(np.concatenate(neg_scores))
    if neg.size == 0:
        raise UndefinedMetricError("sPRO needs anomaly-free pixels for the FPR axis")

    thresholds = select_thresholds(np.concatenate(all_scores), max_thresholds)
    fpr = _count_ge(neg, thresholds) / neg.size
    spro = np.zeros_like(fpr)
    for rs, sat in zip(regions_scores, saturation):
        spro += np.minimum(_count_ge(rs, thresholds) / sat, 1.0)
    spro /= len(regions_scores)
    return SPROCurve(np.r_[0.0, fpr], np.r_[0.0, spro], np.r_[np.inf, thresholds])


def au_spro(curve, fpr_cap: float = 0.05) -> float:
    """Trapezoidal area under the curve for FPR in ``[0, fpr_cap]``, divided by ``fpr_cap``."""
    if not 0.0 < fpr_cap <= 1.0:
        raise ValueError(f"fpr_cap must lie in (0, 1], got {fpr_cap}")
    if isinstance(curve, SPROCurve):
        x, y = curve.fpr.astype(np.float64), curve.spro.astype(np.float64)
    else:
        pts = np.asarray(list(curve), dtype=np.float64)
        if pts.size == 0:
            raise ValueError("empty curve")
        x, y = pts[:, 0], pts[:, 1]
    order = np.lexsort((y, x))
    x, y = x[order], y[order]
    if x[0] > 0.0:
        x, y = np.r_[0.0, x], np.r_[y[0], y]
    inside = x <= fpr_cap
    xs, ys = x[inside], y[inside]
    if xs[-1] < fpr_cap:
        nxt = np.flatnonzero(~inside)
        if nxt.size:
            j = nxt[0]
            y_cap = ys[-1] + (y[j] - ys[-1]) * (fpr_cap - xs[-1]) / (x[j] - xs[-1])
        else:
            y_cap = ys[-1]
        xs, ys = np.r_[xs, fpr_cap], np.r_[ys, y_cap]
    area = float(np.sum(np.diff(xs) * (ys[1:] + ys[:-1]) / 2.0))
    return area / fpr_cap


def image_score(score_map, smoothing: int = 5) -> float:
    """Maximum of the score map after ``smoothing x smoothing`` mean filtering."""
    m = np.asarray(score_map, dtype=np.float64)
    return float(ndimage.uniform_filter(m, size=smoothing, mode="reflect").max())


# --- report --------------------------------------------------------------------

@dataclass
class MetricsReport:
    image_auroc: float | None = None
    pixel_auroc: float | None = None
    pixel_ap: float | None = None
    au_spro_at_fpr: dict[float, float] = field(default_factory=dict)
    per_defect: dict[str, dict] = field(default_factory=dict)

    def __post_init__(self):
        self.au_spro_at_fpr = {float(k): float(v) for k, v in self.au_spro_at_fpr.items()}
        for name, value in self._scalar_items():
            if not (0.0 <= value <= 1.0) or math.isnan(value):
                raise ValueError(f"{name}={value} outside [0, 1]")
        for cap in self.au_spro_at_fpr:
            if not 0.0 < cap <= 1.0:
                raise ValueError(f"fpr cap {cap} outside (0, 1]")

    def _scalar_items(self):
        for name in ("image_auroc", "pixel_auroc", "pixel_ap"):
            v = getattr(self, name)
            if v is not None:
                yield name, float(v)
        for cap, v in self.au_spro_at_fpr.items():
            yield f"au_spro@{cap}", v

    def is_empty(self) -> bool:
        return next(self._scalar_items(), None) is None and not self.per_defect

    def to_dict(self) -> dict:
        return {
            "image_auroc": self.image_auroc,
            "pixel_auroc": self.pixel_auroc,
            "pixel_ap": self.pixel_ap,
            "au_spro_at_fpr": {repr(k): v for k, v in sorted(self.au_spro_at_fpr.items())},
            "per_defect": self.per_defect,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MetricsReport":
        return cls(
            image_auroc=data.get("image_auroc"),
            pixel_auroc=data.get("pixel_auroc"),
            pixel_ap=data.get("pixel_ap"),
            au_spro_at_fpr={float(k): v for k, v in data.get("au_spro_at_fpr", {}).items()},
            per_defect=data.get("per_defect", {}),
        )


def _safe(fn, *args):
    try:
        return fn(*args)
    except UndefinedMetricError:
        return None


def evaluate(score_maps: Sequence[np.ndarray], gts: Sequence, defect_types: Sequence[str] | None = None,
             fpr_caps: Sequence[float] = (0.05,)) -> MetricsReport:
    """Full report for a test set.

    ``gts[i]`` is ``None`` (or an all-zero mask) for good images. Image labels
    are derived from mask non-emptiness. ``defect_types`` enables the
    per-defect breakdown, each defect evaluated together with the good images.
    """
    score_maps = [np.asarray(s, dtype=np.float64) for s in score_maps]
    masks = []
    for s, gt in zip(score_maps, gts):
        m, _ = _regions_of(gt)
        masks.append(np.zeros(s.shape, dtype=bool) if m is None else m)
    labels = np.array([m.any() for m in masks])
    img_scores = np.array([image_score(s) for s in score_maps])
    pix_scores = np.concatenate([s.ravel() for s in score_maps])
    pix_labels = np.concatenate([m.ravel() for m in masks])

    def _spro(idx):
        if not any(labels[i] for i in idx):
            return {}
        curve = spro_curve([score_maps[i] for i in idx], [gts[i] if labels[i] else None for i in idx])
        return {float(c): au_spro(curve, c) for c in fpr_caps}

    everything = list(range(len(score_maps)))
    report = MetricsReport(
        image_auroc=_safe(auroc, img_scores, labels),
        pixel_auroc=_safe(auroc, pix_scores, pix_labels),
        pixel_ap=_safe(average_precision, pix_scores, pix_labels),
        au_spro_at_fpr=_spro(everything),
    )
    if defect_types is not None:
        types = np.asarray(defect_types)
        good = [i for i in everything if not labels[i]]
        for d in sorted(set(types[labels].tolist())):
            idx = good + [i for i in everything if types[i] == d and labels[i]]
            report.per_defect[d] = {
                "image_auroc": _safe(auroc, img_scores[idx], labels[idx]),
                "au_spro_at_fpr": {repr(k): v for k, v in _spro(idx).items()},
            }
    return report
