"""Thin-plate-spline warps driven by a 3x3 control grid.

A :class:`TPSWarp` moves the nine control points of a regular grid by
per-point pixel displacements. The dense backward map is a (optionally
regularised) thin-plate spline fitted from displaced to original positions,
so content at a control point ends up at its displaced location. One warp
object can be applied to an edge map, its image and its mask and the outputs
stay pixel aligned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

GRID = 3


def control_grid(height: int, width: int) -> np.ndarray:
    """``(9, 2)`` array of ``(x, y)`` control positions covering the image corners."""
    xs = np.linspace(0.0, width - 1.0, GRID)
    ys = np.linspace(0.0, height - 1.0, GRID)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


@dataclass(frozen=True)
class TPSWarp:
    displacements: np.ndarray  # (9, 2) pixel offsets (dx, dy), row-major over the grid
    max_shift: float
    smoothing: float = 0.0

    def __post_init__(self):
        d = np.asarray(self.displacements, dtype=np.float64)
        if d.shape != (GRID * GRID, 2):
            raise ValueError(f"displacements must have shape (9, 2), got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ValueError("displacements must be finite")
        mag = np.hypot(d[:, 0], d[:, 1])
        if mag.max() > self.max_shift + 1e-9:
            raise ValueError(f"displacement {mag.max():.3f}px exceeds max_shift {self.max_shift:.3f}px")
        if self.smoothing < 0:
            raise ValueError("smoothing must be non-negative")
        object.__setattr__(self, "displacements", d)

    @classmethod
    def identity(cls, max_shift: float = 0.0) -> "TPSWarp":
        return cls(np.zeros((GRID * GRID, 2)), max_shift=max_shift)

    @classmethod
    def translation(cls, dx: float, dy: float) -> "TPSWarp":
        d = np.tile([dx, dy], (GRID * GRID, 1)).astype(np.float64)
        return cls(d, max_shift=float(np.hypot(dx, dy)))

    @classmethod
    def random(cls, height: int, width: int, rng: np.random.Generator,
               max_shift_frac: float = 0.1, smoothing: float = 0.0) -> "TPSWarp":
        """Shift every control point horizontally and vertically by a random amount.

        Displacement vectors are drawn uniformly in a disc of radius
        ``max_shift_frac * min(height, width)``.
        """
        max_shift = max_shift_frac * min(height, width)
        radius = max_shift * np.sqrt(rng.random(GRID * GRID))
        theta = rng.uniform(0.0, 2.0 * np.pi, GRID * GRID)
        d = np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=1)
        return cls(d, max_shift=max_shift, smoothing=smoothing)

    @property
    def is_identity(self) -> bool:
        return not np.any(self.displacements)

    def sampling_coordinates(self, height: int, width: int) -> np.ndarray:
        """``(2, H, W)`` array of (row, col) source coordinates for every output pixel."""
        src = control_grid(height, width)
        dst = src + self.displacements
        scale = float(max(height, width))
        ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
        query = np.stack([xs.ravel(), ys.ravel()], axis=1)
        mapped = _tps_fit_eval(dst / scale, src / scale, query / scale, self.smoothing) * scale
        return np.stack([mapped[:, 1].reshape(height, width), mapped[:, 0].reshape(height, width)])


def _kernel(r2: np.ndarray) -> np.ndarray:
    # U(r) = r^2 log r, written with r^2 to avoid the sqrt
    with np.errstate(divide="ignore", invalid="ignore"):
        out = 0.5 * r2 * np.log(r2)
    return np.nan_to_num(out, nan=0.0, posinf=0.0, neginf=0.0)


def _tps_fit_eval(ctrl: np.ndarray, values: np.ndarray, query: np.ndarray, smoothing: float) -> np.ndarray:
    """Fit a 2-output TPS through ``ctrl -> values`` and evaluate it at ``query``.

    ``smoothing > 0`` turns interpolation into the regularised fit
    ``min sum |f(c_k) - v_k|^2 + smoothing * bending energy``.
    """
    n = ctrl.shape[0]
    d2 = ((ctrl[:, None, :] - ctrl[None, :, :]) ** 2).sum(-1)
    k = _kernel(d2) + smoothing * np.eye(n)
    p = np.hstack([np.ones((n, 1)), ctrl])
    system = np.zeros((n + 3, n + 3))
    system[:n, :n] = k
    system[:n, n:] = p
    system[n:, :n] = p.T
    rhs = np.zeros((n + 3, 2))
    rhs[:n] = values
    params = np.linalg.solve(system, rhs)
    w, a = params[:n], params[n:]
    q2 = ((query[:, None, :] - ctrl[None, :, :]) ** 2).sum(-1)
    return _kernel(q2) @ w + np.hstack([np.ones((query.shape[0], 1)), query]) @ a


def tps_warp(raster, warp: TPSWarp, fill: float | None = None, order: int = 1) -> np.ndarray:
    """Apply ``warp`` to a 2-D map or ``H x W x C`` image.

    ``fill=None`` replicates the border; a number pads with that constant
    (use ``1.0`` for edge maps so the border reads as background). ``order=0``
    keeps masks binary.
    """
    arr = np.asarray(raster)
    if warp.is_identity:
        return arr.copy()
    h, w = arr.shape[:2]
    coords = warp.sampling_coordinates(h, w)
    mode = "nearest" if fill is None else "constant"
    cval = 0.0 if fill is None else float(fill)

    def _one(channel):
        out = ndimage.map_coordinates(channel.astype(np.float64), coords, order=order, mode=mode, cval=cval)
        return out.astype(arr.dtype)

    if arr.ndim == 2:
        return _one(arr)
    return np.stack([_one(arr[..., c]) for c in range(arr.shape[2])], axis=-1)


def warp_edge_map(edge_map, warp: TPSWarp) -> np.ndarray:
    return np.clip(tps_warp(edge_map, warp, fill=1.0), 0.0, 1.0)


def warp_image(img, warp: TPSWarp) -> np.ndarray:
    return np.clip(tps_warp(img, warp, fill=None), 0.0, 1.0)


def warp_mask(mask, warp: TPSWarp) -> np.ndarray:
    return tps_warp(np.asarray(mask, dtype=np.uint8), warp, fill=0.0, order=0)
