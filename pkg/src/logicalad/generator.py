"""Conditional edge-to-image generator.

A coarse-to-fine convolutional generator maps a one-channel edge map to an
RGB image; a multi-scale PatchGAN discriminator judges (edge, image) pairs.
Training uses the least-squares adversarial loss with discriminator feature
matching, plus a pixel L1 term that stands in for the VGG perceptual loss of
the original recipe (no pretrained VGG is assumed to be available). Training
pairs are co-augmented with one shared TPS warp per pair.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .imaging import InvalidInputError, as_edge_map, as_image
from .tps import TPSWarp, warp_edge_map, warp_image

log = logging.getLogger(__name__)


@dataclass
class GeneratorConfig:
    base_channels: int = 16
    num_downsamples: int = 2
    num_residual_blocks: int = 3
    num_local_enhancers: int = 0
    discriminator_scales: int = 2
    discriminator_layers: int = 3
    adversarial_loss_type: str = "lsgan"
    feature_matching_weight: float = 10.0
    l1_weight: float = 10.0
    epochs: int = 200
    batch_size: int = 4
    learning_rate: float = 2e-4
    tps_pair_augment: bool = True
    tps_probability: float = 0.5
    tps_max_shift_frac: float = 0.05

    def __post_init__(self):
        if self.discriminator_scales < 1:
            raise ValueError("discriminator_scales must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.adversarial_loss_type not in ("lsgan", "hinge"):
            raise ValueError(f"unknown adversarial loss {self.adversarial_loss_type!r}")

    @classmethod
    def paper(cls) -> "GeneratorConfig":
        return cls(base_channels=64, num_downsamples=4, num_residual_blocks=9, num_local_enhancers=1,
                   discriminator_scales=2, epochs=300, batch_size=56)

    @classmethod
    def desk(cls) -> "GeneratorConfig":
        return cls()


class ResidualBlock(nn.Module):
    def __init__(self, ch: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.ReflectionPad2d(1), nn.Conv2d(ch, ch, 3), nn.InstanceNorm2d(ch), nn.ReLU(True),
            nn.ReflectionPad2d(1), nn.Conv2d(ch, ch, 3), nn.InstanceNorm2d(ch),
        )

    def forward(self, x):
        return x + self.body(x)


# Reflect padding and upsample-then-convolve (instead of zero padding and
# transposed convolutions) keep a constant input exactly constant; otherwise
# instance norm amplifies border and checkerboard residues into texture.
def _down(cin, cout):
    return [nn.Conv2d(cin, cout, 3, stride=2, padding=1, padding_mode="reflect"),
            nn.InstanceNorm2d(cout), nn.ReLU(True)]


def _up(cin, cout):
    return [nn.Upsample(scale_factor=2, mode="nearest"), nn.ReflectionPad2d(1), nn.Conv2d(cin, cout, 3),
            nn.InstanceNorm2d(cout), nn.ReLU(True)]


class GlobalGenerator(nn.Module):
    def __init__(self, in_ch: int, ngf: int, n_down: int, n_blocks: int, head: bool = True):
        super().__init__()
        layers = [nn.ReflectionPad2d(3), nn.Conv2d(in_ch, ngf, 7), nn.InstanceNorm2d(ngf), nn.ReLU(True)]
        ch = ngf
        for _ in range(n_down):
            layers += _down(ch, ch * 2)
            ch *= 2
        layers += [ResidualBlock(ch) for _ in range(n_blocks)]
        for _ in range(n_down):
            layers += _up(ch, ch // 2)
            ch //= 2
        self.features = nn.Sequential(*layers)
        self.head = nn.Sequential(nn.ReflectionPad2d(3), nn.Conv2d(ngf, 3, 7)) if head else None

    def forward(self, x):
        f = self.features(x)
        return f if self.head is None else self.head(f)


class EdgeToImageGenerator(nn.Module):
    """Global generator, optionally wrapped by local enhancers at finer scales."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.n_local = cfg.num_local_enhancers
        ngf_global = cfg.base_channels * (2 ** self.n_local)
        self.global_net = GlobalGenerator(1, ngf_global, cfg.num_downsamples, cfg.num_residual_blocks,
                                          head=self.n_local == 0)
        self.local_front = nn.ModuleList()
        self.local_back = nn.ModuleList()
        for n in range(1, self.n_local + 1):
            ngf = cfg.base_channels * (2 ** (self.n_local - n))
            self.local_front.append(nn.Sequential(
                nn.ReflectionPad2d(3), nn.Conv2d(1, ngf, 7), nn.InstanceNorm2d(ngf), nn.ReLU(True),
                *_down(ngf, ngf * 2)))
            back = [ResidualBlock(ngf * 2) for _ in range(3)] + _up(ngf * 2, ngf)
            if n == self.n_local:
                back += [nn.ReflectionPad2d(3), nn.Conv2d(ngf, 3, 7)]
            self.local_back.append(nn.Sequential(*back))

    def forward(self, edges: torch.Tensor) -> torch.Tensor:
        pyramid = [edges]
        for _ in range(self.n_local):
            pyramid.append(F.avg_pool2d(pyramid[-1], 3, stride=2, padding=1, count_include_pad=False))
        out = self.global_net(pyramid[-1])
        for n in range(self.n_local):
            out = self.local_back[n](self.local_front[n](pyramid[self.n_local - 1 - n]) + out)
        return torch.sigmoid(out)


class PatchDiscriminator(nn.Module):
    def __init__(self, in_ch: int, ndf: int, n_layers: int):
        super().__init__()
        blocks = [nn.Sequential(nn.Conv2d(in_ch, ndf, 4, stride=2, padding=2), nn.LeakyReLU(0.2, True))]
        ch = ndf
        for i in range(1, n_layers):
            nxt = min(ch * 2, 512)
            stride = 2 if i < n_layers - 1 else 1
            blocks.append(nn.Sequential(nn.Conv2d(ch, nxt, 4, stride=stride, padding=2),
                                        nn.InstanceNorm2d(nxt), nn.LeakyReLU(0.2, True)))
            ch = nxt
        blocks.append(nn.Sequential(nn.Conv2d(ch, 1, 4, stride=1, padding=2)))
        self.blocks = nn.ModuleList(blocks)

    def forward(self, x) -> list[torch.Tensor]:
        feats = []
        for b in self.blocks:
            x = b(x)
            feats.append(x)
        return feats


class MultiScaleDiscriminator(nn.Module):
    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.nets = nn.ModuleList(
            PatchDiscriminator(4, cfg.base_channels * 2, cfg.discriminator_layers)
            for _ in range(cfg.discriminator_scales)
        )

    def forward(self, x) -> list[list[torch.Tensor]]:
        outs = []
        for i, net in enumerate(self.nets):
            if i:
                x = F.avg_pool2d(x, 3, stride=2, padding=1, count_include_pad=False)
            outs.append(net(x))
        return outs


def _adv_loss(preds: list[list[torch.Tensor]], real: bool, kind: str, for_generator: bool = False) -> torch.Tensor:
    total = 0.0
    for feats in preds:
        p = feats[-1]
        if kind == "lsgan":
            total = total + F.mse_loss(p, torch.full_like(p, 1.0 if real else 0.0))
        elif for_generator:
            total = total - p.mean()
        else:
            total = total + F.relu(1.0 - p).mean() if real else total + F.relu(1.0 + p).mean()
    return total / len(preds)


def _feature_matching(fake: list[list[torch.Tensor]], real: list[list[torch.Tensor]]) -> torch.Tensor:
    total = 0.0
    n = 0
    for ff, rf in zip(fake, real):
        for a, b in zip(ff[:-1], rf[:-1]):
            total = total + F.l1_loss(a, b.detach())
            n += 1
    return total / max(n, 1)


def _to_tensor_edges(edges: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(edges, dtype=np.float32))[:, None]


def _to_tensor_images(images: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(np.asarray(images, dtype=np.float32).transpose(0, 3, 1, 2)))


@dataclass
class GeneratorModel:
    net: EdgeToImageGenerator
    config: GeneratorConfig
    category: str = ""
    resolution: tuple[int, int] | None = None
    history: list[dict] = field(default_factory=list)

    def state(self) -> dict:
        return {
            "config": asdict(self.config),
            "category": self.category,
            "resolution": list(self.resolution) if self.resolution else None,
            "history": self.history,
            "weights": self.net.state_dict(),
        }

    @classmethod
    def from_state(cls, state: dict) -> "GeneratorModel":
        cfg = GeneratorConfig(**state["config"])
        net = EdgeToImageGenerator(cfg)
        net.load_state_dict(state["weights"])
        net.eval()
        res = tuple(state["resolution"]) if state.get("resolution") else None
        return cls(net, cfg, state.get("category", ""), res, list(state.get("history", [])))


def build_generator(cfg: GeneratorConfig, seed: int = 0, category: str = "",
                    resolution: tuple[int, int] | None = None) -> GeneratorModel:
    torch.manual_seed(seed)
    net = EdgeToImageGenerator(cfg).eval()
    return GeneratorModel(net, cfg, category, resolution)


def train_generator(pairs: Sequence[tuple[np.ndarray, np.ndarray]], cfg: GeneratorConfig,
                    seed: int = 0, category: str = "") -> GeneratorModel:
    """Fit the generator on (edge map, image) pairs of normal images.

    When ``cfg.tps_pair_augment`` is set, each pair in a batch is warped with
    probability ``cfg.tps_probability``; the edge map and the image share the
    same warp so they stay aligned. Per-epoch mean losses are stored in
    ``model.history``.
    """
    if len(pairs) == 0:
        raise ValueError("train_generator needs at least one (edge map, image) pair")
    edges = np.stack([as_edge_map(e) for e, _ in pairs])
    images = np.stack([as_image(im) for _, im in pairs])
    h, w = edges.shape[1:]
    if images.shape[1:3] != (h, w):
        raise InvalidInputError("edge maps and images must share the same resolution")

    rng = np.random.default_rng(seed)
    torch.manual_seed(seed)
    model = GeneratorModel(EdgeToImageGenerator(cfg), cfg, category, (h, w))
    disc = MultiScaleDiscriminator(cfg)
    opt_g = torch.optim.Adam(model.net.parameters(), lr=cfg.learning_rate, betas=(0.5, 0.999))
    opt_d = torch.optim.Adam(disc.parameters(), lr=cfg.learning_rate, betas=(0.5, 0.999))

    model.net.train()
    n = len(pairs)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        sums = {"g_adv": 0.0, "g_fm": 0.0, "g_l1": 0.0, "d": 0.0}
        steps = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            e_batch = edges[idx].copy()
            i_batch = images[idx].copy()
            if cfg.tps_pair_augment:
                for k in range(len(idx)):
                    if rng.random() < cfg.tps_probability:
                        warp = TPSWarp.random(h, w, rng, cfg.tps_max_shift_frac)
                        e_batch[k] = warp_edge_map(e_batch[k], warp)
                        i_batch[k] = warp_image(i_batch[k], warp)
            e_t = _to_tensor_edges(e_batch)
            real = _to_tensor_images(i_batch)

            fake = model.net(e_t)
            pred_fake = disc(torch.cat([e_t, fake.detach()], 1))
            pred_real = disc(torch.cat([e_t, real], 1))
            loss_d = 0.5 * (_adv_loss(pred_fake, False, cfg.adversarial_loss_type)
                            + _adv_loss(pred_real, True, cfg.adversarial_loss_type))
            opt_d.zero_grad()
            loss_d.backward()
            opt_d.step()

            pred_fake = disc(torch.cat([e_t, fake], 1))
            g_adv = _adv_loss(pred_fake, True, cfg.adversarial_loss_type, for_generator=True)
            g_fm = _feature_matching(pred_fake, [[f.detach() for f in fs] for fs in pred_real])
            g_l1 = F.l1_loss(fake, real)
            loss_g = g_adv + cfg.feature_matching_weight * g_fm + cfg.l1_weight * g_l1
            opt_g.zero_grad()
            loss_g.backward()
            opt_g.step()

            sums["g_adv"] += g_adv.item()
            sums["g_fm"] += g_fm.item()
            sums["g_l1"] += g_l1.item()
            sums["d"] += loss_d.item()
            steps += 1
        record = {"epoch": epoch, **{k: v / steps for k, v in sums.items()}}
        model.history.append(record)
        if epoch % 50 == 0 or epoch == cfg.epochs - 1:
            log.info("generator epoch %d: %s", epoch, record)
    model.net.eval()
    return model


@torch.no_grad()
def generate_batch(model: GeneratorModel, edges: np.ndarray) -> np.ndarray:
    """``N x H x W`` edge maps to ``N x H x W x 3`` images."""
    edges = np.asarray(edges, dtype=np.float32)
    if model.resolution is not None and tuple(edges.shape[1:]) != tuple(model.resolution):
        raise InvalidInputError(f"edge maps {edges.shape[1:]} do not match model resolution {model.resolution}")
    model.net.eval()
    out = model.net(_to_tensor_edges(edges))
    return out.permute(0, 2, 3, 1).numpy()


def generate(model: GeneratorModel, edge_map) -> np.ndarray:
    e = as_edge_map(edge_map)
    return generate_batch(model, e[None])[0]


def generate_pair(model: GeneratorModel, normal_edges, anomaly_edges) -> tuple[np.ndarray, np.ndarray]:
    """Generate the normal and anomaly images from one model in a single pass."""
    a = as_edge_map(normal_edges)
    b = as_edge_map(anomaly_edges)
    if a.shape != b.shape:
        raise InvalidInputError(f"shape mismatch: {a.shape} vs {b.shape}")
    out = generate_batch(model, np.stack([a, b]))
    return out[0], out[1]
