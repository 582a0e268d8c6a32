"""Dual-stream pose network assembled from the heatmap, motion and decoder modules."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import torch
import torch.nn as nn

from .decoder import JointQueryDecoder, MemoryFusion, PoseHead
from .embedder import SpatialTokenEmbedder
from .heatmap_net import HeatmapNet, HeatmapNetConfig
from .motion import StaticFeatureExtractor, TemporalEncoder, TemporalEncoderConfig

ABLATIONS = ("full", "spatial_only", "motion_only", "concat_fusion")


@dataclass
class ModelConfig:
    heatmap: HeatmapNetConfig = field(default_factory=HeatmapNetConfig)
    temporal: TemporalEncoderConfig = field(default_factory=TemporalEncoderConfig)
    embed_dim: int = 128
    embedder_channels: tuple = (16, 32, 64)
    embedder_norm: bool = False
    static_channels: tuple = (16, 32, 64)
    d_model: int = 64
    decoder_layers: int = 3
    decoder_heads: int = 4
    decoder_dropout: float = 0.0
    head_dropout: float = 0.1
    ablation: str = "full"

    def __post_init__(self):
        if isinstance(self.heatmap, dict):
            self.heatmap = HeatmapNetConfig(**self.heatmap)
        if isinstance(self.temporal, dict):
            self.temporal = TemporalEncoderConfig(**self.temporal)
        self.embedder_channels = tuple(self.embedder_channels)
        self.static_channels = tuple(self.static_channels)
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")

    @property
    def num_joints(self) -> int:
        return self.heatmap.num_joints

    def to_dict(self) -> dict:
        d = asdict(self)
        d["heatmap"] = self.heatmap.to_dict()
        d["embedder_channels"] = list(self.embedder_channels)
        d["static_channels"] = list(self.static_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class EgoPoseNet(nn.Module):
    """Frames ``(B, T, 3, S, S)`` -> joints ``(B, T, J, 3)`` in millimeters."""

    def __init__(self, config: ModelConfig = None):
        super().__init__()
        self.config = cfg = config or ModelConfig()
        self.heatmap_net = HeatmapNet(cfg.heatmap)
        self.embedder = SpatialTokenEmbedder(cfg.embed_dim, cfg.embedder_channels, cfg.embedder_norm)
        self.static = StaticFeatureExtractor(cfg.temporal.model_dim, cfg.static_channels)
        self.temporal = TemporalEncoder(cfg.temporal)
        self.fusion = MemoryFusion(cfg.embed_dim, cfg.temporal.model_dim, cfg.d_model)
        self.decoder = JointQueryDecoder(cfg.num_joints, cfg.d_model, cfg.decoder_layers,
                                         cfg.decoder_heads, cfg.decoder_dropout)
        self.head = PoseHead(cfg.d_model, dropout=cfg.head_dropout)
        self.heatmap_frozen = False

    @property
    def uses_spatial(self) -> bool:
        return self.config.ablation != "motion_only"

    @property
    def uses_motion(self) -> bool:
        return self.config.ablation != "spatial_only"

    def freeze_heatmap(self):
        self.heatmap_frozen = True
        self.heatmap_net.requires_grad_(False)
        self.heatmap_net.eval()
        return self

    def train(self, mode=True):
        super().train(mode)
        if self.heatmap_frozen:
            self.heatmap_net.eval()
        if self.config.temporal.frozen:
            self.temporal.eval()
        return self

    def forward_features(self, frames, valid_mask=None) -> dict:
        B, T = frames.shape[:2]
        if valid_mask is None:
            valid_mask = torch.ones(B, T, dtype=torch.bool, device=frames.device)
        out = {"valid_mask": valid_mask}
        tokens = motion = None
        if self.uses_spatial:
            flat = frames.reshape(B * T, *frames.shape[2:])
            with torch.set_grad_enabled(torch.is_grad_enabled() and not self.heatmap_frozen):
                logits = self.heatmap_net(flat)
            heatmaps = torch.sigmoid(logits).reshape(B, T, *logits.shape[1:])
            tokens = self.embedder(heatmaps)
            out.update(heatmap_logits=logits.reshape(B, T, *logits.shape[1:]), heatmaps=heatmaps,
                       tokens=tokens)
        if self.uses_motion:
            static = self.static(frames)
            motion = self.temporal(static, valid_mask)
            out.update(static=static, motion=motion)
        memory = self.fusion(tokens, motion, num_joints=self.config.num_joints)
        out["memory"] = memory
        if self.config.ablation == "concat_fusion":
            decoded = memory
        else:
            decoded = self.decoder(memory)
        out["decoded"] = decoded
        out["poses"] = self.head(decoded)
        return out

    def forward(self, frames, valid_mask=None):
        return self.forward_features(frames, valid_mask)["poses"]
