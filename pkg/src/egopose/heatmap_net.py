"""Weight-shared residual encoder with a unified-skip pyramid decoder for 2D joint heatmaps."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

HEATMAP_STRIDE = 4


@dataclass
class HeatmapNetConfig:
    input_resolution: int = 64
    heatmap_resolution: int = 16
    num_joints: int = 15
    encoder_channels: tuple = (16, 32, 64, 128)
    decoder_channels: int = 32

    def __post_init__(self):
        self.encoder_channels = tuple(int(c) for c in self.encoder_channels)
        if not self.encoder_channels:
            raise ValueError("encoder_channels must be non-empty")
        if self.input_resolution != HEATMAP_STRIDE * self.heatmap_resolution:
            raise ValueError(
                f"input_resolution must be {HEATMAP_STRIDE}x heatmap_resolution, "
                f"got {self.input_resolution} and {self.heatmap_resolution}"
            )
        if self.input_resolution % (2 ** len(self.encoder_channels)):
            raise ValueError("input_resolution must be divisible by 2 per encoder stage")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_channels"] = list(self.encoder_channels)
        return d


class ResidualBlock(nn.Module):
    def __init__(self, cin, cout, stride=1):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        self.shortcut = nn.Identity()
        if stride != 1 or cin != cout:
            self.shortcut = nn.Sequential(nn.Conv2d(cin, cout, 1, stride, bias=False), nn.BatchNorm2d(cout))

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + self.shortcut(x))


class HeatmapNet(nn.Module):
    """RGB frames ``(N, 3, S, S)`` -> heatmap logits ``(N, J, S/4, S/4)``.

    Every encoder stage halves the resolution; each stage is projected to
    ``decoder_channels``, resized to the heatmap grid and summed before the
    J-channel head. Only the head is joint-specific.
    """

    def __init__(self, config: HeatmapNetConfig = None):
        super().__init__()
        self.config = config or HeatmapNetConfig()
        cfg = self.config
        stages, cin = [], 3
        for c in cfg.encoder_channels:
            stages.append(ResidualBlock(cin, c, stride=2))
            cin = c
        self.stages = nn.ModuleList(stages)
        self.lateral = nn.ModuleList(nn.Conv2d(c, cfg.decoder_channels, 1) for c in cfg.encoder_channels)
        self.smooth = nn.Sequential(
            nn.Conv2d(cfg.decoder_channels, cfg.decoder_channels, 3, 1, 1),
            nn.BatchNorm2d(cfg.decoder_channels),
            nn.ReLU(inplace=True),
        )
        self.head = nn.Conv2d(cfg.decoder_channels, cfg.num_joints, 1)

    def forward(self, frames):
        S = self.config.input_resolution
        if frames.ndim != 4 or frames.shape[1] != 3 or tuple(frames.shape[-2:]) != (S, S):
            raise ValueError(f"expected frames (N, 3, {S}, {S}), got {tuple(frames.shape)}")
        size = (self.config.heatmap_resolution,) * 2
        fused, x = 0, frames
        for stage, lateral in zip(self.stages, self.lateral):
            x = stage(x)
            y = lateral(x)
            if tuple(y.shape[-2:]) != size:
                y = F.interpolate(y, size=size, mode="bilinear", align_corners=False)
            fused = fused + y
        return self.head(self.smooth(fused))


def heatmap_loss(logits, target, kind="sigmoid-xent"):
    """Pixel-wise heatmap loss averaged over joints and pixels.

    ``sigmoid-xent`` is ``max(x, 0) - x y + log(1 + exp(-|x|))``; ``mse``
    compares ``sigmoid(x)`` with the target.
    """
    if logits.shape != target.shape:
        raise ValueError(f"logits {tuple(logits.shape)} and target {tuple(target.shape)} differ")
    if kind == "sigmoid-xent":
        return (logits.clamp_min(0) - logits * target + torch.log1p(torch.exp(-logits.abs()))).mean()
    if kind == "mse":
        return ((torch.sigmoid(logits) - target) ** 2).mean()
    raise ValueError(f"unknown heatmap loss kind {kind!r}")


def heatmap_loss_grad(logits, target):
    """Closed-form gradient of the sigmoid cross-entropy mean w.r.t. the logits."""
    return (torch.sigmoid(logits) - target) / logits.numel()
