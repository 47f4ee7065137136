"""Dataset ingestion, reports and checkpoints.

Supported layout (MVTec AD / LOCO / VisA converted / MADsim converted)::

    <root>/<category>/train/good/*.png
    <root>/<category>/test/<defect>/*.png
    <root>/<category>/ground_truth/<defect>/<stem>_mask.png   # one mask per image
    <root>/<category>/ground_truth/<defect>/<stem>/*.png      # LOCO: one file per region
    <root>/<category>/defects_config.json                      # optional LOCO saturation config
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
import torch

from .imaging import read_gray, read_image
from .metrics import GTRegion, MetricsReport, regions_from_mask

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")
CHECKPOINT_FORMAT = "logicalad-checkpoint/1"

DEFAULT_IMAGE_SIZE = {"visa": (256, 320)}


def default_image_size(dataset: str) -> tuple[int, int]:
    return DEFAULT_IMAGE_SIZE.get(dataset.lower(), (256, 256))


class DatasetError(RuntimeError):
    pass


@dataclass(frozen=True)
class DefectSaturation:
    pixel_value: int
    saturation_threshold: float
    relative_saturation: bool

    def area(self, region_area: float) -> float:
        sat = self.saturation_threshold * region_area if self.relative_saturation else self.saturation_threshold
        return float(min(max(sat, 1e-9), region_area))


@dataclass
class DatasetSpec:
    root: Path
    category: str
    image_size: tuple[int, int] = (256, 256)
    split: str = "train"
    saturation_config: dict[str, DefectSaturation] | None = None

    def __post_init__(self):
        self.root = Path(self.root)
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be 'train' or 'test', got {self.split!r}")


@dataclass
class GroundTruth:
    mask: np.ndarray
    defect_type: str
    regions: list[GTRegion] = field(default_factory=list)

    @property
    def saturation_area(self) -> float:
        return float(sum(r.saturation_area for r in self.regions))


@dataclass
class Sample:
    image: np.ndarray
    ground_truth: GroundTruth | None
    path: Path
    defect_type: str

    @property
    def is_anomalous(self) -> bool:
        return self.ground_truth is not None and bool(self.ground_truth.mask.any())


@dataclass
class LoadedSplit:
    samples: list[Sample]
    skipped: int = 0

    def __iter__(self) -> Iterator[Sample]:
        return iter(self.samples)

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    @property
    def images(self) -> list[np.ndarray]:
        return [s.image for s in self.samples]


def parse_defects_config(path) -> dict[str, DefectSaturation]:
    entries = json.loads(Path(path).read_text())
    return {
        e["defect_name"]: DefectSaturation(int(e.get("pixel_value", 255)), float(e["saturation_threshold"]),
                                           bool(e["relative_saturation"]))
        for e in entries
    }


def _list_images(folder: Path) -> list[Path]:
    return sorted(p for p in folder.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file())


def _ground_truth(gt_dir: Path, stem: str, defect: str, size, sat: DefectSaturation | None) -> GroundTruth:
    single = [gt_dir / f"{stem}_mask{ext}" for ext in IMAGE_SUFFIXES] + [gt_dir / f"{stem}{ext}" for ext in IMAGE_SUFFIXES]
    region_dir = gt_dir / stem
    if region_dir.is_dir():
        regions = []
        for f in _list_images(region_dir):
            raw = read_gray(f, size, nearest=True)
            value = sat.pixel_value / 255.0 if sat else None
            m = np.isclose(raw, value, atol=0.5 / 255.0) if value is not None else raw > 0.5
            if m.any():
                area = float(m.sum())
                regions.append(GTRegion(m, sat.area(area) if sat else area))
        if not regions:
            raise DatasetError(f"ground-truth directory {region_dir} has no non-empty masks")
        mask = np.any([r.mask for r in regions], axis=0)
        return GroundTruth(mask.astype(np.uint8), defect, regions)
    for f in single:
        if f.is_file():
            mask = read_gray(f, size, nearest=True) > 0.5
            regions = regions_from_mask(mask)
            if sat is not None:
                regions = [GTRegion(r.mask, sat.area(float(r.mask.sum()))) for r in regions]
            return GroundTruth(mask.astype(np.uint8), defect, regions)
    raise DatasetError(f"missing ground-truth mask for anomalous test image {stem!r} ({defect})")


def load_dataset(spec: DatasetSpec) -> LoadedSplit:
    """Load one split in sorted path order, resized to ``spec.image_size``.

    Images are resized bilinearly, masks with nearest neighbour. Good test
    images get an all-zero ground truth; train images get none. Unreadable
    images are skipped and counted; a missing mask is a hard error.
    """
    base = spec.root / spec.category
    if not base.is_dir():
        raise DatasetError(f"category directory {base} does not exist")
    sat_cfg = spec.saturation_config
    if sat_cfg is None and (base / "defects_config.json").is_file():
        sat_cfg = parse_defects_config(base / "defects_config.json")
    size = tuple(spec.image_size)
    split_dir = base / spec.split
    if not split_dir.is_dir():
        raise DatasetError(f"split directory {split_dir} does not exist")
    defects = ["good"] if spec.split == "train" else sorted(p.name for p in split_dir.iterdir() if p.is_dir())
    samples, skipped = [], 0
    for defect in defects:
        folder = split_dir / defect
        if not folder.is_dir():
            continue
        for path in _list_images(folder):
            try:
                img = read_image(path, size)
            except (OSError, ValueError) as exc:
                log.warning("skipping unreadable image %s: %s", path, exc)
                skipped += 1
                continue
            gt = None
            if spec.split == "test":
                if defect == "good":
                    gt = GroundTruth(np.zeros(size, dtype=np.uint8), "good", [])
                else:
                    sat = sat_cfg.get(defect) if sat_cfg else None
                    gt = _ground_truth(base / "ground_truth" / defect, path.stem, defect, size, sat)
            samples.append(Sample(img, gt, path, defect))
    return LoadedSplit(samples, skipped)


# --- reports -------------------------------------------------------------------

def save_report(report: MetricsReport, path) -> None:
    if report.is_empty():
        raise ValueError("refusing to write an empty metrics report")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))


def load_report(path) -> MetricsReport:
    return MetricsReport.from_dict(json.loads(Path(path).read_text()))


# --- checkpoints -----------------------------------------------------------------

class CheckpointVersionError(RuntimeError):
    pass


def save_checkpoint(path, model_state: dict, optimizer_state: dict | None = None, epoch: int = 0,
                    extra: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({
        "format_version": CHECKPOINT_FORMAT,
        "epoch": epoch,
        "model": model_state,
        "optimizer": optimizer_state,
        "extra": extra or {},
    }, path)


def load_checkpoint(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint {path} does not exist")
    data = torch.load(path, map_location="cpu", weights_only=False)
    version = data.get("format_version") if isinstance(data, dict) else None
    if version != CHECKPOINT_FORMAT:
        raise CheckpointVersionError(f"checkpoint format {version!r} does not match expected {CHECKPOINT_FORMAT!r}")
    return data
