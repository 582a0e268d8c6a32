import json

import numpy as np
import pytest
import torch

from egopose.checkpoint import CheckpointError, load_checkpoint, parameter_digest, save_checkpoint
from egopose.heatmap_net import HeatmapNet, HeatmapNetConfig


def _net():
    return HeatmapNet(HeatmapNetConfig(encoder_channels=(4, 4, 8, 8), decoder_channels=4))


def test_roundtrip_with_optimizer(tmp_path):
    net = _net()
    opt = torch.optim.Adam(net.parameters(), lr=1e-3)
    net(torch.randn(2, 3, 64, 64)).mean().backward()
    opt.step()
    path = save_checkpoint(tmp_path / "a.ckpt", "heatmap", {"x": 1}, net.state_dict(), {"frozen": True},
                           opt.state_dict())
    ck = load_checkpoint(path)
    assert ck.kind == "heatmap" and ck.config == {"x": 1} and ck.meta["frozen"]
    other = _net()
    other.load_state_dict(ck.state_dict())
    assert parameter_digest(other) == parameter_digest(net)
    opt2 = torch.optim.Adam(other.parameters(), lr=1e-3)
    opt2.load_state_dict(ck.optimizer_state())
    a, b = opt.state_dict()["state"][0], opt2.state_dict()["state"][0]
    assert torch.equal(a["exp_avg"], b["exp_avg"]) and float(a["step"]) == float(b["step"])
    assert not [p for p in tmp_path.iterdir() if p.name.startswith(".")]


def test_digest_detects_any_change():
    net = _net()
    d = parameter_digest(net)
    with torch.no_grad():
        net.head.bias[0] += 1e-7
    assert parameter_digest(net) != d


def test_rejects_foreign_and_corrupt_files(tmp_path):
    np.savez(tmp_path / "plain.npz", a=np.zeros(3))
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "plain.npz")
    header = {"format": "egopose-checkpoint", "version": 99, "kind": "x", "config": {}, "meta": {}, "arrays": {}}
    np.savez(tmp_path / "future.npz", __meta__=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(tmp_path / "future.npz")
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "missing.ckpt")
