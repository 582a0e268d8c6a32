"""Composite kinematic training loss on ``(..., J, 3)`` joint tensors (millimeters)."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import torch

from .skeleton import SkeletonTopology, bone_vectors

logger = logging.getLogger(__name__)

COS_EPS = 1e-8


@dataclass(frozen=True)
class LossWeights:
    lambda_pos: float = 1.0
    lambda_bone: float = 0.1
    lambda_cos: float = 0.01

    def __post_init__(self):
        if min(self.lambda_pos, self.lambda_bone, self.lambda_cos) < 0:
            raise ValueError("loss weights must be non-negative")


def _check_pair(pred, gt):
    if pred.shape != gt.shape:
        raise ValueError(f"pred shape {tuple(pred.shape)} != gt shape {tuple(gt.shape)}")


def _reduce(per_frame, mask, reduction):
    if reduction == "none":
        return per_frame
    if mask is None:
        return per_frame.mean()
    mask = mask.to(per_frame.dtype)
    return (per_frame * mask).sum() / mask.sum().clamp_min(1.0)


def loss_pos(pred, gt, mask=None, reduction="mean"):
    """Mean Euclidean joint error per pose, averaged over poses."""
    _check_pair(pred, gt)
    per_frame = torch.linalg.vector_norm(pred - gt, dim=-1).mean(dim=-1)
    return _reduce(per_frame, mask, reduction)


def loss_bone(pred, gt, topo: SkeletonTopology, mask=None, reduction="mean"):
    """Mean squared bone-length difference (mm^2)."""
    _check_pair(pred, gt)
    lp = torch.linalg.vector_norm(bone_vectors(pred, topo), dim=-1)
    lg = torch.linalg.vector_norm(bone_vectors(gt, topo), dim=-1)
    per_frame = ((lp - lg) ** 2).mean(dim=-1)
    return _reduce(per_frame, mask, reduction)


def loss_cos(pred, gt, topo: SkeletonTopology, mask=None, reduction="mean"):
    """Negative mean cosine between predicted and true bone vectors, in [-1, 1].

    A zero-length bone contributes 0 to the sum thanks to the epsilon in the
    denominator.
    """
    _check_pair(pred, gt)
    bp = bone_vectors(pred, topo)
    bg = bone_vectors(gt, topo)
    np_ = torch.linalg.vector_norm(bp, dim=-1)
    ng = torch.linalg.vector_norm(bg, dim=-1)
    denom = np_ * ng
    if bool((denom.detach() == 0).any()):
        logger.warning("zero-length bone in cosine loss; term skipped via epsilon guard")
    cos = (bp * bg).sum(dim=-1) / (denom + COS_EPS)
    per_frame = -cos.mean(dim=-1)
    return _reduce(per_frame, mask, reduction)


def composite_loss(pred, gt, topo: SkeletonTopology, weights: LossWeights = LossWeights(),
                   mask=None, return_terms=False):
    """``lambda_pos * L_pos + lambda_bone * L_bone + lambda_cos * L_cos``.

    ``mask`` (leading shape of ``pred`` without ``(J, 3)``) restricts the
    average to valid frames.
    """
    terms = {
        "pos": loss_pos(pred, gt, mask),
        "bone": loss_bone(pred, gt, topo, mask),
        "cos": loss_cos(pred, gt, topo, mask),
    }
    total = (weights.lambda_pos * terms["pos"] + weights.lambda_bone * terms["bone"]
             + weights.lambda_cos * terms["cos"])
    if return_terms:
        return total, terms
    return total
