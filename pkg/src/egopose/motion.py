"""Static appearance features and the local-to-global masked temporal encoder."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .heatmap_net import ResidualBlock


@dataclass
class TemporalEncoderConfig:
    num_blocks: int = 8
    num_local_blocks: int = 4
    window_w: int = 8
    model_dim: int = 64
    num_heads: int = 4
    ffn_multiplier: int = 4
    frozen: bool = True
    literal_block: bool = False

    def __post_init__(self):
        if not 0 <= self.num_local_blocks <= self.num_blocks:
            raise ValueError("num_local_blocks must be in [0, num_blocks]")
        if self.window_w < 1:
            raise ValueError("window_w must be >= 1")
        if self.model_dim % self.num_heads:
            raise ValueError("model_dim must be divisible by num_heads")

    def to_dict(self) -> dict:
        return asdict(self)


class StaticFeatureExtractor(nn.Module):
    """Per-frame CNN + global average pooling + linear + batch norm.

    All backbone stages but the last are frozen (and held in eval mode),
    mirroring a pretrained backbone with only its final block fine-tuned.
    """

    def __init__(self, model_dim=64, channels=(16, 32, 64), freeze_early_stages=True):
        super().__init__()
        stages, cin = [], 3
        for c in channels:
            stages.append(ResidualBlock(cin, c, stride=2))
            cin = c
        self.stages = nn.ModuleList(stages)
        self.proj = nn.Linear(cin, model_dim)
        self.norm = nn.BatchNorm1d(model_dim)
        self.freeze_early_stages = freeze_early_stages
        if freeze_early_stages:
            for stage in self.stages[:-1]:
                stage.requires_grad_(False)

    def train(self, mode=True):
        super().train(mode)
        if self.freeze_early_stages:
            for stage in self.stages[:-1]:
                stage.eval()
        return self

    def forward(self, frames):
        """``(B, T, 3, S, S)`` -> ``(B, T, model_dim)``."""
        if frames.ndim != 5 or frames.shape[2] != 3:
            raise ValueError(f"expected (B, T, 3, S, S) frames, got {tuple(frames.shape)}")
        B, T = frames.shape[:2]
        x = frames.reshape(B * T, *frames.shape[2:])
        for stage in self.stages:
            x = stage(x)
        x = self.norm(self.proj(x.mean(dim=(-2, -1))))
        return x.reshape(B, T, -1)


def attention_mask(valid_mask, window=None):
    """Boolean ``(B, T, T)``: query ``i`` may attend key ``j``."""
    T = valid_mask.shape[-1]
    allowed = valid_mask[:, None, :] & valid_mask[:, :, None]
    if window is not None:
        idx = torch.arange(T, device=valid_mask.device)
        band = (idx[:, None] - idx[None, :]).abs() <= window
        allowed = allowed & band
    return allowed


class MaskedMultiheadAttention(nn.Module):
    def __init__(self, dim, num_heads):
        super().__init__()
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, x, allowed, return_weights=False):
        B, T, D = x.shape
        q, k, v = self.qkv(x).reshape(B, T, 3, self.num_heads, self.head_dim).permute(2, 0, 3, 1, 4)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        allowed = allowed[:, None]  # broadcast over heads
        has_key = allowed.any(dim=-1, keepdim=True)
        # fully masked rows (invalid queries) would softmax to NaN; they are zeroed below
        scores = scores.masked_fill(~allowed, float("-inf")).masked_fill(~has_key, 0.0)
        weights = torch.softmax(scores, dim=-1) * has_key
        y = (weights @ v).transpose(1, 2).reshape(B, T, D)
        y = self.out(y)
        if return_weights:
            return y, weights
        return y


class MaskedAttentionBlock(nn.Module):
    """Pre-norm attention + feed-forward block; ``window=None`` attends the whole sequence.

    With ``literal=True`` the block computes ``Attn(LN z) + FFN(LN z)``
    without the identity path.
    """

    def __init__(self, dim, num_heads=4, ffn_multiplier=4, window=None, literal=False):
        super().__init__()
        self.window = window
        self.literal = literal
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MaskedMultiheadAttention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = nn.Sequential(
            nn.Linear(dim, ffn_multiplier * dim),
            nn.GELU(),
            nn.Linear(ffn_multiplier * dim, dim),
        )

    def forward(self, x, valid_mask=None, return_weights=False):
        B, T, _ = x.shape
        if valid_mask is None:
            valid_mask = torch.ones(B, T, dtype=torch.bool, device=x.device)
        allowed = attention_mask(valid_mask, self.window)
        a, weights = self.attn(self.norm1(x), allowed, return_weights=True)
        if self.literal:
            out = a + self.ffn(self.norm2(x))
        else:
            h = x + a
            out = h + self.ffn(self.norm2(h))
        out = out * valid_mask[..., None].to(out.dtype)
        if return_weights:
            return out, weights
        return out


def local_masked_attention_block(dim, w, **kwargs) -> MaskedAttentionBlock:
    return MaskedAttentionBlock(dim, window=w, **kwargs)


def global_masked_attention_block(dim, **kwargs) -> MaskedAttentionBlock:
    return MaskedAttentionBlock(dim, window=None, **kwargs)


class TemporalEncoder(nn.Module):
    """``num_local_blocks`` windowed blocks followed by full-sequence blocks; time-aligned output."""

    def __init__(self, config: TemporalEncoderConfig = None):
        super().__init__()
        self.config = cfg = config or TemporalEncoderConfig()
        blocks = []
        for i in range(cfg.num_blocks):
            window = cfg.window_w if i < cfg.num_local_blocks else None
            blocks.append(MaskedAttentionBlock(cfg.model_dim, cfg.num_heads, cfg.ffn_multiplier,
                                               window=window, literal=cfg.literal_block))
        self.blocks = nn.ModuleList(blocks)
        if cfg.frozen:
            self.requires_grad_(False)

    def forward(self, static_features, valid_mask=None, num_blocks=None):
        if static_features.shape[-1] != self.config.model_dim:
            raise ValueError(
                f"static features have dim {static_features.shape[-1]}, encoder expects {self.config.model_dim}"
            )
        B, T, _ = static_features.shape
        if valid_mask is None:
            valid_mask = torch.ones(B, T, dtype=torch.bool, device=static_features.device)
        z = static_features * valid_mask[..., None].to(static_features.dtype)
        for block in self.blocks[:num_blocks]:
            z = block(z, valid_mask)
        return z


def encode_motion(static_features, encoder: TemporalEncoder, valid_mask=None):
    return encoder(static_features, valid_mask)
