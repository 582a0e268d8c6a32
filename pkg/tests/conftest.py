import numpy as np
import pytest
import torch

from egopose.data import WindowConfig, write_dataset
from egopose.heatmap_net import HeatmapNetConfig
from egopose.model import ModelConfig
from egopose.motion import TemporalEncoderConfig
from egopose.skeleton import SkeletonTopology
from egopose.training import ExperimentConfig


@pytest.fixture
def topo():
    return SkeletonTopology()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_model_config(**kw) -> ModelConfig:
    """Small but structurally complete network for fast training tests."""
    base = dict(
        heatmap=HeatmapNetConfig(64, 16, 15, (8, 8, 16, 16), 8),
        temporal=TemporalEncoderConfig(num_blocks=2, num_local_blocks=1, window_w=2, model_dim=16, num_heads=2,
                                       ffn_multiplier=2),
        embed_dim=16,
        embedder_channels=(4, 8, 8),
        static_channels=(4, 8, 8),
        d_model=16,
        decoder_layers=1,
        decoder_heads=2,
    )
    base.update(kw)
    return ModelConfig(**base)


def tiny_experiment(**kw) -> ExperimentConfig:
    base = dict(epochs=2, batch_size=4, window=WindowConfig(8, 4), model=tiny_model_config(), seed=0)
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    write_dataset(root, num_records=4, num_frames=20, seed=7, image_size=64, test_fraction=0.25)
    return root


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)


@pytest.fixture(scope="session")
def heatmap_ckpt(tiny_dataset, tmp_path_factory):
    from egopose.training import train_heatmap

    out = tmp_path_factory.mktemp("hm")
    return train_heatmap(tiny_experiment(stage="heatmap", epochs=1), tiny_dataset, out)
