"""Reconstruction and localization sub-networks.

The reconstruction sub-network maps a (possibly anomalous) image to a normal
image, its JND map and its edge probability map. The localization
sub-network runs one shared encoder over the input and the reconstruction,
fuses the two feature streams per level in a difference neck, and decodes a
per-pixel anomaly probability with the reconstruction error and the
reconstructed edges as extra channels.

Blocks are dilated channel-and-spatial attention blocks (parallel dilated
convolutions, a squeeze-excitation channel gate and a pooled spatial gate),
switchable to plain double convolutions for ablations.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .imaging import InvalidInputError


@dataclass
class NetConfig:
    encoder_depth: int = 3
    base_channels: int = 16
    attention_block: str = "dcsa"
    neck: str = "diff_concat"
    edge_head: bool = True
    focal_gamma: float = 2.0
    focal_alpha: float = 0.75
    edge_eta: float = 0.3
    edge_alpha: float = 1.0
    edge_beta: float = 1.1

    def __post_init__(self):
        if self.attention_block not in ("dcsa", "plain"):
            raise ValueError(f"attention_block must be 'dcsa' or 'plain', got {self.attention_block!r}")
        if self.neck not in ("diff_concat", "plain_concat"):
            raise ValueError(f"neck must be 'diff_concat' or 'plain_concat', got {self.neck!r}")
        if self.focal_gamma < 0:
            raise ValueError("focal_gamma must be non-negative")
        if self.encoder_depth < 1:
            raise ValueError("encoder_depth must be >= 1")
        if not 0 < self.edge_eta < 1:
            raise ValueError("edge_eta must lie in (0, 1)")

    @property
    def heads(self) -> tuple[str, ...]:
        return ("image", "jnd", "edge") if self.edge_head else ("image", "jnd")


class DCSABlock(nn.Module):
    def __init__(self, cin: int, cout: int, rates=(1, 2, 4), reduction: int = 4):
        super().__init__()
        self.inp = nn.Sequential(nn.Conv2d(cin, cout, 3, padding=1), nn.BatchNorm2d(cout), nn.ReLU(True))
        self.branches = nn.ModuleList(nn.Conv2d(cout, cout, 3, padding=r, dilation=r) for r in rates)
        self.fuse = nn.Sequential(nn.Conv2d(cout * len(rates), cout, 1), nn.BatchNorm2d(cout), nn.ReLU(True))
        hidden = max(cout // reduction, 4)
        self.channel_gate = nn.Sequential(nn.Linear(cout, hidden), nn.ReLU(True), nn.Linear(hidden, cout))
        self.spatial_gate = nn.Conv2d(2, 1, 7, padding=3)

    def forward(self, x):
        x = self.inp(x)
        y = self.fuse(torch.cat([b(x) for b in self.branches], 1))
        c = torch.sigmoid(self.channel_gate(y.mean(dim=(2, 3))))[:, :, None, None]
        y = y * c
        s = torch.sigmoid(self.spatial_gate(torch.cat([y.mean(1, keepdim=True), y.amax(1, keepdim=True)], 1)))
        return x + y * s


class PlainBlock(nn.Module):
    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(cin, cout, 3, padding=1), nn.BatchNorm2d(cout), nn.ReLU(True),
            nn.Conv2d(cout, cout, 3, padding=1), nn.BatchNorm2d(cout), nn.ReLU(True),
        )

    def forward(self, x):
        return self.body(x)


def _block(kind: str, cin: int, cout: int) -> nn.Module:
    return DCSABlock(cin, cout) if kind == "dcsa" else PlainBlock(cin, cout)


class Encoder(nn.Module):
    def __init__(self, cin: int, cfg: NetConfig):
        super().__init__()
        chs = [cfg.base_channels * 2 ** i for i in range(cfg.encoder_depth + 1)]
        self.channels = chs
        self.levels = nn.ModuleList()
        prev = cin
        for c in chs:
            self.levels.append(_block(cfg.attention_block, prev, c))
            prev = c

    def forward(self, x) -> list[torch.Tensor]:
        feats = []
        for i, level in enumerate(self.levels):
            if i:
                x = F.max_pool2d(x, 2)
            x = level(x)
            feats.append(x)
        return feats


class Decoder(nn.Module):
    def __init__(self, channels: list[int], cfg: NetConfig):
        super().__init__()
        self.ups = nn.ModuleList()
        self.blocks = nn.ModuleList()
        for i in range(len(channels) - 1, 0, -1):
            self.ups.append(nn.Sequential(nn.Upsample(scale_factor=2, mode="bilinear", align_corners=False),
                                          nn.Conv2d(channels[i], channels[i - 1], 3, padding=1)))
            self.blocks.append(_block(cfg.attention_block, 2 * channels[i - 1], channels[i - 1]))

    def forward(self, feats: list[torch.Tensor]) -> torch.Tensor:
        x = feats[-1]
        for up, block, skip in zip(self.ups, self.blocks, reversed(feats[:-1])):
            x = block(torch.cat([up(x), skip], 1))
        return x


class ReconstructionNet(nn.Module):
    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.encoder = Encoder(3, cfg)
        self.decoder = Decoder(self.encoder.channels, cfg)
        c = cfg.base_channels
        self.heads = nn.ModuleDict({
            "image": nn.Conv2d(c, 3, 1),
            "jnd": nn.Conv2d(c, 1, 1),
        })
        if cfg.edge_head:
            self.heads["edge"] = nn.Conv2d(c, 1, 1)

    def forward(self, x) -> dict[str, torch.Tensor]:
        f = self.decoder(self.encoder(x))
        return {name: torch.sigmoid(head(f)) for name, head in self.heads.items()}


class LocalizationNet(nn.Module):
    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(3, cfg)
        chs = self.encoder.channels
        k = 3 if cfg.neck == "diff_concat" else 2
        self.neck = nn.ModuleList(nn.Sequential(nn.Conv2d(k * c, c, 1), nn.ReLU(True)) for c in chs)
        self.decoder = Decoder(chs, cfg)
        extra = 2 if cfg.edge_head else 1
        c = cfg.base_channels
        self.head = nn.Sequential(nn.Conv2d(c + extra, c, 3, padding=1), nn.ReLU(True), nn.Conv2d(c, 1, 1))

    def forward(self, x, recon: dict[str, torch.Tensor]) -> torch.Tensor:
        f_in = self.encoder(x)
        f_rec = self.encoder(recon["image"])
        fused = []
        for neck, a, b in zip(self.neck, f_in, f_rec):
            parts = [a, b, (a - b).abs()] if self.cfg.neck == "diff_concat" else [a, b]
            fused.append(neck(torch.cat(parts, 1)))
        f = self.decoder(fused)
        extra = [(x - recon["image"]).abs().mean(1, keepdim=True)]
        if "edge" in recon:
            extra.append(recon["edge"])
        return torch.sigmoid(self.head(torch.cat([f] + extra, 1)))


class LogicALNet(nn.Module):
    def __init__(self, cfg: NetConfig | None = None):
        super().__init__()
        self.cfg = cfg or NetConfig()
        self.reconstruction = ReconstructionNet(self.cfg)
        self.localization = LocalizationNet(self.cfg)

    def forward(self, x) -> dict[str, torch.Tensor]:
        recon = self.reconstruction(x)
        out = dict(recon)
        out["score"] = self.localization(x, recon)
        return out

    def config_dict(self) -> dict:
        return asdict(self.cfg)


class ReconOutput(NamedTuple):
    image: np.ndarray
    jnd: np.ndarray
    edge_map: np.ndarray | None  # 1 = background


def _check_input(model: LogicALNet, img) -> torch.Tensor:
    arr = np.asarray(img, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise InvalidInputError(f"expected HxWx3 image, got {arr.shape}")
    div = 2 ** model.cfg.encoder_depth
    if arr.shape[0] % div or arr.shape[1] % div:
        raise InvalidInputError(f"image sides must be multiples of {div}, got {arr.shape[:2]}")
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1)))[None]


@torch.no_grad()
def reconstruct(model: LogicALNet, img) -> ReconOutput:
    model.eval()
    out = model.reconstruction(_check_input(model, img))
    edge = 1.0 - out["edge"][0, 0].numpy() if "edge" in out else None
    return ReconOutput(out["image"][0].permute(1, 2, 0).numpy(), out["jnd"][0, 0].numpy(), edge)


@torch.no_grad()
def localize(model: LogicALNet, img, recon: ReconOutput) -> np.ndarray:
    model.eval()
    x = _check_input(model, img)
    r = {
        "image": torch.from_numpy(np.ascontiguousarray(recon.image.transpose(2, 0, 1)))[None],
        "jnd": torch.from_numpy(recon.jnd)[None, None],
    }
    if recon.edge_map is not None and model.cfg.edge_head:
        r["edge"] = torch.from_numpy(1.0 - recon.edge_map)[None, None]
    if r["image"].shape != x.shape:
        raise InvalidInputError("reconstruction does not match the input shape")
    return model.localization(x, r)[0, 0].numpy()


@torch.no_grad()
def predict_scores(model: LogicALNet, images, batch_size: int = 16) -> np.ndarray:
    """Anomaly score maps for a stack of images (``N x H x W``)."""
    model.eval()
    images = np.asarray(images, dtype=np.float32)
    out = []
    for s in range(0, len(images), batch_size):
        x = torch.from_numpy(np.ascontiguousarray(images[s:s + batch_size].transpose(0, 3, 1, 2)))
        out.append(model(x)["score"][:, 0].numpy())
    return np.concatenate(out) if out else np.zeros((0,) + images.shape[1:3], np.float32)
