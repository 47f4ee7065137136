"""Raster types, SSIM and PNG helpers shared by the whole pipeline.

Images are ``H x W x 3`` float arrays in ``[0, 1]``. Edge maps are ``H x W``
float arrays in ``[0, 1]`` where ``1.0`` is background (no edge). Region
masks are ``H x W`` binary arrays with ``1`` marking the selected region.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
import torch
from PIL import Image as PILImage

MIN_SIDE = 32

# ITU-R BT.601 luma
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


class InvalidInputError(ValueError):
    """Raised when an array violates the contract of a raster type."""


@dataclass(frozen=True)
class SSIMConfig:
    window_size: int = 11
    gaussian_sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0

    def __post_init__(self):
        if self.window_size < 3 or self.window_size % 2 == 0:
            raise InvalidInputError(f"window_size must be odd and >= 3, got {self.window_size}")
        if self.k1 <= 0 or self.k2 <= 0:
            raise InvalidInputError("k1 and k2 must be positive")
        if self.gaussian_sigma <= 0 or self.dynamic_range <= 0:
            raise InvalidInputError("gaussian_sigma and dynamic_range must be positive")

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2


DEFAULT_SSIM = SSIMConfig()


def _check_finite_range(values: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(values)):
        raise InvalidInputError(f"{name} contains non-finite values")
    if values.size and (values.min() < 0.0 or values.max() > 1.0):
        raise InvalidInputError(
            f"{name} values must lie in [0, 1], got [{values.min():.4g}, {values.max():.4g}]"
        )


def as_image(pixels, min_side: int = MIN_SIDE) -> np.ndarray:
    """Validate and return an ``H x W x 3`` float32 image in ``[0, 1]``."""
    arr = np.asarray(pixels, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise InvalidInputError(f"image must have shape HxWx3, got {arr.shape}")
    if arr.shape[0] < min_side or arr.shape[1] < min_side:
        raise InvalidInputError(f"image sides must be >= {min_side}, got {arr.shape[:2]}")
    _check_finite_range(arr, "image")
    return arr.astype(np.float32)


def as_edge_map(values) -> np.ndarray:
    """Validate and return an ``H x W`` float32 edge map (1 = background)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise InvalidInputError(f"edge map must be 2-D, got shape {arr.shape}")
    _check_finite_range(arr, "edge map")
    return arr.astype(np.float32)


def as_region_mask(values, allow_empty: bool = True) -> np.ndarray:
    """Validate and return an ``H x W`` uint8 mask with values in {0, 1}."""
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise InvalidInputError(f"region mask must be 2-D, got shape {arr.shape}")
    if arr.dtype == bool:
        arr = arr.astype(np.uint8)
    if not np.all(np.isin(arr, (0, 1))):
        raise InvalidInputError("region mask values must be 0 or 1")
    arr = arr.astype(np.uint8)
    if not allow_empty and not arr.any():
        raise InvalidInputError("region mask is empty")
    return arr


def clamp01(values) -> np.ndarray:
    arr = np.asarray(values)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("clamp01 received non-finite values")
    return np.clip(arr, 0.0, 1.0)


def to_grayscale(img) -> np.ndarray:
    """BT.601 luma of an RGB image; 2-D input is returned unchanged."""
    arr = np.asarray(img, dtype=np.float32)
    if arr.ndim == 2:
        return arr
    w = np.asarray(LUMA_WEIGHTS, dtype=np.float32)
    return np.clip(arr[..., :3] @ w, 0.0, 1.0)


# --- SSIM -----------------------------------------------------------------

def gaussian_window(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - size // 2
    g = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def _reflect_index(k: int, n: int) -> int:
    # half-sample symmetric extension: d c b a | a b c d | d c b a
    period = 2 * n
    k %= period
    return period - 1 - k if k >= n else k


@lru_cache(maxsize=64)
def blur_matrix(n: int, size: int, sigma: float) -> np.ndarray:
    """Dense ``n x n`` operator for 1-D Gaussian filtering with reflect borders.

    Works for any ``n`` (including signals shorter than the window), so SSIM
    stays defined and differentiable on tiny inputs.
    """
    w = gaussian_window(size, sigma)
    r = size // 2
    mat = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        for o in range(size):
            mat[i, _reflect_index(i + o - r, n)] += w[o]
    mat.setflags(write=False)
    return mat


def _blur(x: torch.Tensor, cfg: SSIMConfig) -> torch.Tensor:
    h, w = x.shape[-2:]
    mh = torch.tensor(blur_matrix(h, cfg.window_size, cfg.gaussian_sigma), dtype=x.dtype, device=x.device)
    mw = torch.tensor(blur_matrix(w, cfg.window_size, cfg.gaussian_sigma), dtype=x.dtype, device=x.device)
    return mh @ x @ mw.transpose(0, 1)


def ssim_torch(a: torch.Tensor, b: torch.Tensor, cfg: SSIMConfig = DEFAULT_SSIM) -> torch.Tensor:
    """Per-pixel SSIM over the last two axes of ``a`` and ``b`` (differentiable)."""
    if a.shape != b.shape:
        raise InvalidInputError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    mu_a = _blur(a, cfg)
    mu_b = _blur(b, cfg)
    var_a = _blur(a * a, cfg) - mu_a * mu_a
    var_b = _blur(b * b, cfg) - mu_b * mu_b
    cov = _blur(a * b, cfg) - mu_a * mu_b
    c1, c2 = cfg.c1, cfg.c2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim_map(a, b, cfg: SSIMConfig | None = None) -> np.ndarray:
    """SSIM map of two grayscale (``H x W``) or color (``H x W x C``) rasters.

    Color inputs are compared channel-wise and the channel maps averaged, so the
    result is always ``H x W``. The mean of the map is the scalar SSIM.
    """
    cfg = cfg or DEFAULT_SSIM
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInputError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim not in (2, 3):
        raise InvalidInputError(f"expected 2-D or 3-D raster, got shape {a.shape}")
    ta = torch.from_numpy(a)
    tb = torch.from_numpy(b)
    if a.ndim == 3:
        ta = ta.permute(2, 0, 1)
        tb = tb.permute(2, 0, 1)
        return ssim_torch(ta, tb, cfg).mean(dim=0).numpy()
    return ssim_torch(ta, tb, cfg).numpy()


# --- PNG I/O ----------------------------------------------------------------

def read_image(path, size: tuple[int, int] | None = None) -> np.ndarray:
    """Read an RGB image as float32 in [0, 1], optionally resized (bilinear) to ``(H, W)``."""
    with PILImage.open(path) as im:
        im = im.convert("RGB")
        if size is not None and im.size != (size[1], size[0]):
            im = im.resize((size[1], size[0]), PILImage.BILINEAR)
        return np.asarray(im, dtype=np.float32) / 255.0


def read_gray(path, size: tuple[int, int] | None = None, nearest: bool = False) -> np.ndarray:
    with PILImage.open(path) as im:
        im = im.convert("L")
        if size is not None and im.size != (size[1], size[0]):
            im = im.resize((size[1], size[0]), PILImage.NEAREST if nearest else PILImage.BILINEAR)
        return np.asarray(im, dtype=np.float32) / 255.0


def to_uint8(values) -> np.ndarray:
    return np.round(np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_image(path, pixels) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(to_uint8(pixels)).save(path)


def write_gray(path, values) -> None:
    """Persist an edge map, score map or mask as 8-bit grayscale (round(255 x))."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(to_uint8(values)).save(path)
