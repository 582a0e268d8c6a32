"""MPJPE, Procrustes-aligned MPJPE and metric reports."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np


class DegeneratePoseError(ValueError):
    """Raised when a reference pose has no spatial extent to align against."""


def _check_pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.shape[-1] != 3:
        raise ValueError(f"pred {pred.shape} and gt {gt.shape} must both be (..., J, 3)")
    return pred, gt


def joint_errors(pred, gt) -> np.ndarray:
    pred, gt = _check_pair(pred, gt)
    return np.linalg.norm(pred - gt, axis=-1)


def mpjpe(pred, gt) -> float:
    """Mean per-joint Euclidean error over every frame and joint."""
    return float(joint_errors(pred, gt).mean())


def umeyama(src, dst):
    """Similarity ``(s, R, t)`` minimizing ``sum ||s R src_j + t - dst_j||^2``.

    ``src``/``dst`` are ``(N, 3)``. ``R`` is always a proper rotation.
    """
    src, dst = _check_pair(src, dst)
    if src.ndim != 2 or src.shape[0] < 3:
        raise ValueError("need at least 3 points of shape (N, 3)")
    mu_s, mu_d = src.mean(0), dst.mean(0)
    xs, xd = src - mu_s, dst - mu_d
    var_d = (xd**2).sum() / len(dst)
    if var_d <= 1e-12 * max(1.0, float(np.abs(dst).max()) ** 2):
        raise DegeneratePoseError("reference pose has zero spatial variance")
    var_s = (xs**2).sum() / len(src)
    cov = xd.T @ xs / len(src)
    U, D, Vt = np.linalg.svd(cov)
    S = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[-1] = -1.0
    R = U @ np.diag(S) @ Vt
    s = float((D * S).sum() / var_s) if var_s > 0 else 0.0
    t = mu_d - s * R @ mu_s
    return s, R, t


def procrustes_align(pred, gt) -> np.ndarray:
    """Align each ``(J, 3)`` frame of ``pred`` onto ``gt`` independently."""
    pred, gt = _check_pair(pred, gt)
    flat_p = pred.reshape(-1, *pred.shape[-2:])
    flat_g = gt.reshape(-1, *gt.shape[-2:])
    out = np.empty_like(flat_p)
    for i, (p, g) in enumerate(zip(flat_p, flat_g)):
        s, R, t = umeyama(p, g)
        out[i] = s * p @ R.T + t
    return out.reshape(pred.shape)


def pa_mpjpe(pred, gt) -> float:
    """MPJPE after per-frame similarity alignment of ``pred`` onto ``gt``."""
    aligned = procrustes_align(pred, gt)
    return mpjpe(aligned, gt)


@dataclass
class MetricReport:
    mpjpe_mm: float
    pa_mpjpe_mm: float
    per_joint_mpjpe_mm: list
    num_frames: int = 0
    joint_names: list = None

    @classmethod
    def from_predictions(cls, pred, gt, joint_names=None) -> "MetricReport":
        """``pred``/``gt`` are ``(N, J, 3)`` stacks of evaluated frames."""
        pred, gt = _check_pair(pred, gt)
        if pred.size == 0:
            raise ValueError("no frames to evaluate")
        errs = joint_errors(pred, gt).reshape(-1, pred.shape[-2])
        per_joint = errs.mean(axis=0)
        return cls(
            mpjpe_mm=float(errs.mean()),
            pa_mpjpe_mm=pa_mpjpe(pred, gt),
            per_joint_mpjpe_mm=[float(v) for v in per_joint],
            num_frames=int(errs.shape[0]),
            joint_names=list(joint_names) if joint_names is not None else None,
        )

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        return cls(**json.loads(text))

    def write_json(self, path):
        with open(path, "w") as f:
            f.write(self.to_json())

    def write_joint_csv(self, path):
        names = self.joint_names or [f"joint_{j}" for j in range(len(self.per_joint_mpjpe_mm))]
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["joint_index", "joint_name", "mpjpe_mm"])
            for j, (name, err) in enumerate(zip(names, self.per_joint_mpjpe_mm)):
                w.writerow([j, name, f"{err:.6f}"])
