"""scikit-learn compatible wrappers around the two training stages."""

from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .data import channel_statistics, normalize_frames
from .heatmap_net import HeatmapNet, HeatmapNetConfig
from .losses import LossWeights
from .metrics import mpjpe
from .model import ModelConfig
from .motion import TemporalEncoderConfig
from .skeleton import SkeletonTopology
from .training import ExperimentConfig, JsonlLogger, seed_everything, build_pose_model, fit_heatmap_net, fit_pose_net
from .validation import check_consistent_length, check_frames, check_heatmaps, check_poses, check_valid_mask


class HeatmapEstimator(TransformerMixin, BaseEstimator):
    """Fit frames ``(N, H, W, 3)`` to target heatmaps ``(N, J, Hm, Wm)``; transform returns sigmoid maps."""

    def __init__(self, input_resolution=64, heatmap_resolution=16, encoder_channels=(16, 32, 64, 128),
                 decoder_channels=32, loss="sigmoid-xent", epochs=5, batch_size=8, lr_start=1e-3,
                 lr_end=1e-4, grad_clip_norm=1.0, random_state=0):
        self.input_resolution = input_resolution
        self.heatmap_resolution = heatmap_resolution
        self.encoder_channels = encoder_channels
        self.decoder_channels = decoder_channels
        self.loss = loss
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr_start = lr_start
        self.lr_end = lr_end
        self.grad_clip_norm = grad_clip_norm
        self.random_state = random_state

    def _net_config(self, num_joints):
        return HeatmapNetConfig(self.input_resolution, self.heatmap_resolution, num_joints,
                                tuple(self.encoder_channels), self.decoder_channels)

    def _frames(self, X):
        return torch.from_numpy(normalize_frames(X, self.input_resolution, self.mean_, self.std_))

    def fit(self, X, y):
        X = check_frames(X, 4)
        y = check_heatmaps(y, 4)
        check_consistent_length(X, y)
        if y.shape[-2:] != (self.heatmap_resolution,) * 2:
            raise ValueError(f"target heatmaps must be {self.heatmap_resolution}px, got {y.shape[-2:]}")
        self.mean_, self.std_ = channel_statistics(X)
        cfg = ExperimentConfig(stage="heatmap", epochs=self.epochs, batch_size=self.batch_size,
                               lr_start=self.lr_start, lr_end=self.lr_end, grad_clip_norm=self.grad_clip_norm,
                               heatmap_loss_kind=self.loss, seed=self.random_state)
        seed_everything(self.random_state)
        self.net_ = HeatmapNet(self._net_config(y.shape[1]))
        log = JsonlLogger()
        fit_heatmap_net(self.net_, self._frames(X), torch.from_numpy(y), cfg, log)
        self.net_.eval()
        self.history_ = log.records
        self.n_joints_ = y.shape[1]
        return self

    @torch.no_grad()
    def transform(self, X):
        check_is_fitted(self, "net_")
        X = check_frames(X, 4)
        self.net_.eval()
        return torch.sigmoid(self.net_(self._frames(X))).numpy()


class EgoPoseEstimator(RegressorMixin, BaseEstimator):
    """Fit windows of frames ``(N, T, H, W, 3)`` to joint sequences ``(N, T, J, 3)`` (mm).

    ``heatmap_estimator`` supplies the frozen, already fitted spatial stream;
    without it the heatmap network keeps its random initialization.
    """

    def __init__(self, heatmap_estimator=None, ablation="full", d_model=64, embed_dim=128, temporal_dim=64,
                 num_blocks=8, num_local_blocks=4, window_w=8, temporal_frozen=True, head_dropout=0.1,
                 decoder_dropout=0.0, loss_weights=(1.0, 0.1, 0.01), epochs=5, batch_size=8, lr_start=1e-3,
                 lr_end=1e-4, grad_clip_norm=1.0, random_state=0):
        self.heatmap_estimator = heatmap_estimator
        self.ablation = ablation
        self.d_model = d_model
        self.embed_dim = embed_dim
        self.temporal_dim = temporal_dim
        self.num_blocks = num_blocks
        self.num_local_blocks = num_local_blocks
        self.window_w = window_w
        self.temporal_frozen = temporal_frozen
        self.head_dropout = head_dropout
        self.decoder_dropout = decoder_dropout
        self.loss_weights = loss_weights
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr_start = lr_start
        self.lr_end = lr_end
        self.grad_clip_norm = grad_clip_norm
        self.random_state = random_state

    def _experiment(self, num_joints):
        if self.heatmap_estimator is not None:
            check_is_fitted(self.heatmap_estimator, "net_")
            hcfg = self.heatmap_estimator.net_.config
        else:
            hcfg = HeatmapNetConfig(num_joints=num_joints)
        model = ModelConfig(
            heatmap=hcfg,
            temporal=TemporalEncoderConfig(num_blocks=self.num_blocks, num_local_blocks=self.num_local_blocks,
                                           window_w=self.window_w, model_dim=self.temporal_dim,
                                           frozen=self.temporal_frozen),
            embed_dim=self.embed_dim, d_model=self.d_model, head_dropout=self.head_dropout,
            decoder_dropout=self.decoder_dropout, ablation=self.ablation,
        )
        return ExperimentConfig(stage="pose", epochs=self.epochs, batch_size=self.batch_size,
                                lr_start=self.lr_start, lr_end=self.lr_end, grad_clip_norm=self.grad_clip_norm,
                                loss_weights=LossWeights(*self.loss_weights), ablation=self.ablation,
                                seed=self.random_state, model=model)

    def _frames(self, X, valid):
        frames = normalize_frames(X, self.model_.config.heatmap.input_resolution, self.mean_, self.std_)
        return torch.from_numpy(frames * valid[:, :, None, None, None])

    def fit(self, X, y, valid_mask=None, topology=None):
        X = check_frames(X, 5)
        y = check_poses(y, 4)
        check_consistent_length(X, y)
        if X.shape[:2] != y.shape[:2]:
            raise ValueError(f"frames {X.shape[:2]} and poses {y.shape[:2]} disagree on (N, T)")
        valid = check_valid_mask(valid_mask, X.shape[:2])
        self.topology_ = topology or SkeletonTopology()
        if self.topology_.num_joints != y.shape[2]:
            raise ValueError(f"topology has {self.topology_.num_joints} joints, poses have {y.shape[2]}")
        cfg = self._experiment(y.shape[2])
        if self.heatmap_estimator is not None:
            self.mean_, self.std_ = self.heatmap_estimator.mean_, self.heatmap_estimator.std_
        else:
            self.mean_, self.std_ = channel_statistics(X[valid])
        self.model_ = build_pose_model(cfg)
        if self.heatmap_estimator is not None:
            self.model_.heatmap_net.load_state_dict(self.heatmap_estimator.net_.state_dict())
        frames = self._frames(X, valid)
        poses = torch.from_numpy(y.astype(np.float32))
        mask = torch.from_numpy(valid)
        self.model_.head.init_offset(poses, mask)
        log = JsonlLogger()
        fit_pose_net(self.model_, frames, poses, mask, cfg, self.topology_, log)
        self.model_.eval()
        self.history_ = log.records
        self.n_joints_ = y.shape[2]
        return self

    @torch.no_grad()
    def predict(self, X, valid_mask=None):
        check_is_fitted(self, "model_")
        X = check_frames(X, 5)
        valid = check_valid_mask(valid_mask, X.shape[:2])
        self.model_.eval()
        out = []
        for i in range(0, len(X), self.batch_size):
            sl = slice(i, i + self.batch_size)
            out.append(self.model_(self._frames(X[sl], valid[sl]), torch.from_numpy(valid[sl])).double().numpy())
        return np.concatenate(out)

    def score(self, X, y, sample_weight=None):
        """Negative MPJPE (mm), so that higher is better."""
        y = check_poses(y, 4, self.n_joints_)
        return -mpjpe(self.predict(X), y)
