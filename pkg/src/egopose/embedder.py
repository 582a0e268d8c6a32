"""Per-joint heatmap embedding into compact spatial tokens."""

from __future__ import annotations

import torch.nn as nn

MIN_HEATMAP_SIZE = 8


class SpatialTokenEmbedder(nn.Module):
    """Shared 3-layer strided CNN + adaptive pooling + linear, applied to each joint map alone.

    Input ``(B, T, J, H, W)`` heatmaps, output ``(B, T, J, embed_dim)`` tokens.
    """

    def __init__(self, embed_dim=128, channels=(16, 32, 64), norm=False):
        super().__init__()
        self.embed_dim = embed_dim
        layers, cin = [], 1
        for c in channels:
            layers.append(nn.Conv2d(cin, c, 3, stride=2, padding=1))
            if norm:
                layers.append(nn.BatchNorm2d(c))
            layers.append(nn.ReLU(inplace=True))
            cin = c
        self.convs = nn.Sequential(*layers)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.proj = nn.Linear(cin, embed_dim)

    def forward(self, heatmaps):
        if heatmaps.ndim != 5:
            raise ValueError(f"expected (B, T, J, H, W) heatmaps, got {tuple(heatmaps.shape)}")
        B, T, J, H, W = heatmaps.shape
        if min(H, W) < MIN_HEATMAP_SIZE:
            raise ValueError(f"heatmaps must be at least {MIN_HEATMAP_SIZE}px for 3 downsamplings")
        x = heatmaps.reshape(B * T * J, 1, H, W)
        x = self.pool(self.convs(x)).flatten(1)
        return self.proj(x).reshape(B, T, J, self.embed_dim)
