"""Procedural toy category in the MVTec directory layout.

Every normal image shows the same arrangement inside a tray: a red disk,
a blue square and a green bar, with small jitter in position and colour.
Test defects cover both anomaly families:

* ``missing_component`` and ``extra_component`` break the layout rules
  (logical anomalies);
* ``scratch`` and ``contamination`` are local appearance defects
  (structural anomalies).

A ``defects_config.json`` with per-defect saturation thresholds is written
next to the data, in the same format as MVTec LOCO.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .imaging import write_gray, write_image

DEFECTS = {
    "missing_component": {"pixel_value": 255, "saturation_threshold": 1.0, "relative_saturation": True},
    "extra_component": {"pixel_value": 255, "saturation_threshold": 1.0, "relative_saturation": True},
    "scratch": {"pixel_value": 255, "saturation_threshold": 0.5, "relative_saturation": True},
    "contamination": {"pixel_value": 255, "saturation_threshold": 1.0, "relative_saturation": True},
}

BACKGROUND = np.array([0.82, 0.82, 0.78])
TRAY = np.array([0.55, 0.55, 0.58])
COLORS = {
    "disk": np.array([0.85, 0.20, 0.15]),
    "square": np.array([0.15, 0.30, 0.80]),
    "bar": np.array([0.15, 0.45, 0.15]),
}


def _component_masks(size: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    s = size / 64.0
    ys, xs = np.mgrid[0:size, 0:size] + 0.5
    j = lambda: rng.uniform(-1.0, 1.0) * s  # noqa: E731
    cy, cx = 21 * s + j(), 21 * s + j()
    disk = (ys - cy) ** 2 + (xs - cx) ** 2 <= (7.0 * s) ** 2
    cy, cx = 21 * s + j(), 43 * s + j()
    square = (np.abs(ys - cy) <= 6 * s) & (np.abs(xs - cx) <= 6 * s)
    cy, cx = 45 * s + j(), 32 * s + j()
    bar = (np.abs(ys - cy) <= 3.5 * s) & (np.abs(xs - cx) <= 17 * s)
    return {"disk": disk, "square": square, "bar": bar}


def _tray_mask(size: int) -> np.ndarray:
    s = size / 64.0
    ys, xs = np.mgrid[0:size, 0:size] + 0.5
    return (ys > 8 * s) & (ys < 56 * s) & (xs > 6 * s) & (xs < 58 * s)


def render(size: int, rng: np.random.Generator, components: dict[str, np.ndarray] | None = None) -> tuple[np.ndarray, dict]:
    comps = components if components is not None else _component_masks(size, rng)
    img = np.empty((size, size, 3))
    img[:] = BACKGROUND
    img[_tray_mask(size)] = TRAY
    for name, m in comps.items():
        img[m] = np.clip(COLORS[name] + rng.uniform(-0.03, 0.03, 3), 0, 1)
    img += rng.normal(0.0, 0.01, img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32), comps


def normal_image(size: int, rng: np.random.Generator) -> np.ndarray:
    return render(size, rng)[0]


def defect_image(defect: str, size: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(image, mask)`` for one defect type."""
    s = size / 64.0
    comps = _component_masks(size, rng)
    ys, xs = np.mgrid[0:size, 0:size] + 0.5
    if defect == "missing_component":
        name = ["disk", "square", "bar"][int(rng.integers(3))]
        mask = comps.pop(name)
        img, _ = render(size, rng, comps)
        return img, mask
    if defect == "extra_component":
        cy, cx = 33 * s + rng.uniform(-2, 2) * s, 33 * s + rng.uniform(-2, 2) * s
        mask = (ys - cy) ** 2 + (xs - cx) ** 2 <= (5.0 * s) ** 2
        mask &= ~np.any(np.stack(list(comps.values())), axis=0)
        comps = dict(comps)
        img, _ = render(size, rng, comps)
        img[mask] = COLORS["disk"]
        return img, mask
    img, _ = render(size, rng, comps)
    if defect == "scratch":
        y0, x0 = rng.uniform(12, 52, 2) * s
        angle = rng.uniform(0, np.pi)
        length = rng.uniform(14, 24) * s
        t = (xs - x0) * np.cos(angle) + (ys - y0) * np.sin(angle)
        d = np.abs(-(xs - x0) * np.sin(angle) + (ys - y0) * np.cos(angle))
        mask = (np.abs(t) <= length / 2) & (d <= 1.0 * s)
        img[mask] = 0.08
        return img, mask
    if defect == "contamination":
        cy, cx = rng.uniform(14, 50, 2) * s
        r = rng.uniform(3, 5) * s
        wobble = 1 + 0.3 * np.sin(3 * np.arctan2(ys - cy, xs - cx) + rng.uniform(0, 6))
        mask = np.hypot(ys - cy, xs - cx) <= r * wobble
        img[mask] = np.array([0.45, 0.30, 0.12])
        return img, mask
    raise ValueError(f"unknown toy defect {defect!r}")


def make_toy_dataset(root, category: str = "toy_box", n_train: int = 20, n_test_good: int = 10,
                     n_test_per_defect: int = 5, size: int = 64, seed: int = 0) -> Path:
    """Write a toy category under ``root/category`` and return its path."""
    rng = np.random.default_rng(seed)
    base = Path(root) / category
    for i in range(n_train):
        write_image(base / "train" / "good" / f"{i:03d}.png", normal_image(size, rng))
    for i in range(n_test_good):
        write_image(base / "test" / "good" / f"{i:03d}.png", normal_image(size, rng))
    for defect in DEFECTS:
        for i in range(n_test_per_defect):
            img, mask = defect_image(defect, size, rng)
            write_image(base / "test" / defect / f"{i:03d}.png", img)
            write_gray(base / "ground_truth" / defect / f"{i:03d}_mask.png", mask.astype(np.float32))
    config = [{"defect_name": name, **params} for name, params in DEFECTS.items()]
    (base / "defects_config.json").write_text(json.dumps(config, indent=2))
    return base
