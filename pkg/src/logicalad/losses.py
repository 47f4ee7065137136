"""Training losses of the localization network.

``total = image + jnd + edge + focal`` where the image and JND terms are
mean squared error plus ``1 - SSIM``, the edge term is the annotator-robust
cross-entropy with a dead zone for uncertain edge pixels, and the
segmentation term is the focal loss.
"""

from __future__ import annotations

import torch

from .imaging import DEFAULT_SSIM, SSIMConfig, ssim_torch

EPS = 1e-6


def _as_tensor(x) -> torch.Tensor:
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(x, dtype=torch.float64)


def ssim_loss(a, b, cfg: SSIMConfig = DEFAULT_SSIM) -> torch.Tensor:
    """``1 - mean SSIM`` over the last two axes (channels and batch averaged)."""
    return 1.0 - ssim_torch(_as_tensor(a), _as_tensor(b), cfg).mean()


def loss_image(target, recon, cfg: SSIMConfig = DEFAULT_SSIM) -> torch.Tensor:
    target, recon = _as_tensor(target), _as_tensor(recon)
    return torch.mean((target - recon) ** 2) + ssim_loss(target, recon, cfg)


def loss_jnd(target, recon, cfg: SSIMConfig = DEFAULT_SSIM) -> torch.Tensor:
    return loss_image(target, recon, cfg)


def loss_edge(p, y, eta: float = 0.3, alpha: float = 1.0, beta: float = 1.1) -> torch.Tensor:
    """Annotator-robust edge loss, averaged over pixels.

    ``p`` and ``y`` are edge probabilities (1 = edge). Pixels with ``y == 0``
    cost ``-alpha * log(1 - p)``, uncertain pixels ``0 < y < eta`` cost
    nothing, and the rest cost ``-beta * log(p)``.
    """
    if not 0.0 < eta < 1.0:
        raise ValueError(f"eta must lie in (0, 1), got {eta}")
    p, y = _as_tensor(p), _as_tensor(y)
    p = p.clamp(EPS, 1.0 - EPS)
    neg = y == 0
    pos = y >= eta
    per_pixel = torch.where(neg, -alpha * torch.log(1.0 - p),
                            torch.where(pos, -beta * torch.log(p), torch.zeros_like(p)))
    return per_pixel.mean()


def loss_focal(target, pred, gamma: float = 2.0, alpha: float = 0.75) -> torch.Tensor:
    """Binary focal loss; ``alpha`` weights the anomalous class, ``1 - alpha`` the normal one."""
    target, pred = _as_tensor(target), _as_tensor(pred)
    p = pred.clamp(EPS, 1.0 - EPS)
    pt = torch.where(target > 0.5, p, 1.0 - p)
    at = torch.where(target > 0.5, torch.full_like(p, alpha), torch.full_like(p, 1.0 - alpha))
    return (-at * (1.0 - pt) ** gamma * torch.log(pt)).mean()


def total_loss(outputs: dict, batch: dict, gamma: float = 2.0, alpha: float = 0.75,
               eta: float = 0.3, edge_alpha: float = 1.0, edge_beta: float = 1.1,
               ssim_cfg: SSIMConfig = DEFAULT_SSIM) -> tuple[torch.Tensor, dict[str, float]]:
    """Sum of all loss terms and a per-term breakdown.

    ``batch`` carries ``image`` (normal target), ``jnd``, ``edge`` (target edge
    probability) and ``mask``. The edge term is included only when the
    network has an edge head.
    """
    terms = {
        "image": loss_image(batch["image"], outputs["image"], ssim_cfg),
        "jnd": loss_jnd(batch["jnd"], outputs["jnd"], ssim_cfg),
    }
    if "edge" in outputs:
        terms["edge"] = loss_edge(outputs["edge"], batch["edge"], eta, edge_alpha, edge_beta)
    terms["focal"] = loss_focal(batch["mask"], outputs["score"], gamma, alpha)
    total = sum(terms.values())
    breakdown = {k: v.item() for k, v in terms.items()}
    breakdown["total"] = total.item()
    return total, breakdown
