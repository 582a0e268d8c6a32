"""Joint-conditioned memory fusion, joint-query transformer decoder and pose head."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

LEAKY_SLOPE = 0.01


class MemoryFusion(nn.Module):
    """``M = LeakyReLU([H_e || tile_J(F_m W_m)] W_c)``.

    Either stream may be ``None`` (ablations); its slot is filled with zeros.
    """

    def __init__(self, embed_dim=128, motion_dim=64, d_model=64):
        super().__init__()
        self.embed_dim = embed_dim
        self.d_model = d_model
        self.motion_proj = nn.Linear(motion_dim, d_model)
        self.combine = nn.Linear(embed_dim + d_model, d_model)

    def forward(self, tokens, motion, num_joints=None):
        if tokens is None and motion is None:
            raise ValueError("need at least one of spatial tokens or motion features")
        if tokens is not None:
            B, T, J, E = tokens.shape
            if E != self.embed_dim:
                raise ValueError(f"spatial tokens have dim {E}, expected {self.embed_dim}")
        else:
            B, T = motion.shape[:2]
            J = num_joints
        if motion is not None:
            if tuple(motion.shape[:2]) != (B, T):
                raise ValueError(f"motion features {tuple(motion.shape)} do not match tokens (B={B}, T={T})")
            tiled = self.motion_proj(motion)[:, :, None, :].expand(B, T, J, self.d_model)
        else:
            tiled = tokens.new_zeros(B, T, J, self.d_model)
        if tokens is None:
            tokens = tiled.new_zeros(B, T, J, self.embed_dim)
        return F.leaky_relu(self.combine(torch.cat([tokens, tiled], dim=-1)), LEAKY_SLOPE)


def fuse_memory(tokens, motion, fusion: MemoryFusion):
    return fusion(tokens, motion)


class JointQueryDecoder(nn.Module):
    """Learnable per-joint queries decoded against the memory of each ``(b, t)`` slice.

    Queries are tiled to ``(B*T, J, d)``; they never attend across time and no
    positional encoding is added to queries or memory.
    """

    def __init__(self, num_joints=15, d_model=64, num_layers=3, num_heads=4, dropout=0.1):
        super().__init__()
        self.queries = nn.Parameter(torch.randn(num_joints, d_model))
        layer = nn.TransformerDecoderLayer(d_model, num_heads, dim_feedforward=4 * d_model,
                                           dropout=dropout, batch_first=True)
        self.layers = nn.TransformerDecoder(layer, num_layers=num_layers)

    def forward(self, memory):
        B, T, J, d = memory.shape
        if d != self.queries.shape[1]:
            raise ValueError(f"memory dim {d} != query dim {self.queries.shape[1]}")
        mem = memory.reshape(B * T, J, d)
        tgt = self.queries[None].expand(B * T, -1, -1)
        out = self.layers(tgt, mem)
        return out.reshape(B, T, self.queries.shape[0], d)


def decode_joints(memory, decoder: JointQueryDecoder):
    return decoder(memory)


class PoseHead(nn.Module):
    """Shared per-joint MLP: two LeakyReLU + dropout hidden layers, then xyz.

    The last layer works in meters; outputs are scaled to millimeters and
    shifted by one learnable xyz offset shared by all joints (see
    :meth:`init_offset`), so the head stays joint-agnostic.
    """

    def __init__(self, d_model=64, hidden=None, dropout=0.1, output_scale_mm=1000.0):
        super().__init__()
        h1, h2 = hidden or (d_model, d_model)
        self.mlp = nn.Sequential(
            nn.Linear(d_model, h1), nn.LeakyReLU(LEAKY_SLOPE), nn.Dropout(dropout),
            nn.Linear(h1, h2), nn.LeakyReLU(LEAKY_SLOPE), nn.Dropout(dropout),
            nn.Linear(h2, 3),
        )
        self.output_scale_mm = output_scale_mm
        self.offset = nn.Parameter(torch.zeros(3))

    @torch.no_grad()
    def init_offset(self, poses, valid=None):
        """Center outputs on the mean training joint; ``poses`` is ``(..., J, 3)``."""
        flat = poses.reshape(-1, *poses.shape[-2:])
        if valid is not None:
            flat = flat[valid.reshape(-1)]
        self.offset.copy_(flat.reshape(-1, 3).mean(dim=0))

    def forward(self, features):
        return self.mlp(features) * self.output_scale_mm + self.offset


def regress_pose(features, head: PoseHead):
    return head(features)
