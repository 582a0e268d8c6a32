"""Input validation for array-valued estimator inputs."""

from __future__ import annotations

import numpy as np


def check_frames(X, ndim, name="X") -> np.ndarray:
    """RGB frames as uint8 with ``ndim`` dimensions, channels last."""
    X = np.asarray(X)
    if X.ndim != ndim or X.shape[-1] != 3:
        raise ValueError(f"{name} must be a {ndim}-d array with 3 trailing channels, got shape {X.shape}")
    if X.dtype != np.uint8:
        if not np.issubdtype(X.dtype, np.number) or X.min() < 0 or X.max() > 255:
            raise ValueError(f"{name} must hold uint8 pixel values in [0, 255]")
        X = X.astype(np.uint8)
    return X


def check_poses(y, ndim, num_joints=None, name="y") -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != ndim or y.shape[-1] != 3:
        raise ValueError(f"{name} must be a {ndim}-d array of xyz joints, got shape {y.shape}")
    if num_joints is not None and y.shape[-2] != num_joints:
        raise ValueError(f"{name} has {y.shape[-2]} joints, expected {num_joints}")
    if not np.isfinite(y).all():
        raise ValueError(f"{name} contains non-finite coordinates")
    return y


def check_heatmaps(y, ndim=4, name="y") -> np.ndarray:
    y = np.asarray(y, dtype=np.float32)
    if y.ndim != ndim:
        raise ValueError(f"{name} must be a {ndim}-d heatmap array, got shape {y.shape}")
    if y.size and (y.min() < 0 or y.max() > 1):
        raise ValueError(f"{name} heatmap values must lie in [0, 1]")
    return y


def check_valid_mask(mask, shape) -> np.ndarray:
    if mask is None:
        return np.ones(shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != tuple(shape):
        raise ValueError(f"valid_mask has shape {mask.shape}, expected {tuple(shape)}")
    return mask


def check_consistent_length(*arrays):
    lengths = {len(a) for a in arrays if a is not None}
    if len(lengths) > 1:
        raise ValueError(f"inconsistent numbers of samples: {sorted(lengths)}")
