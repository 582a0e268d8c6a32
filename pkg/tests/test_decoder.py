import pytest
import torch

from egopose.decoder import JointQueryDecoder, MemoryFusion, PoseHead, decode_joints, fuse_memory, regress_pose


@pytest.mark.parametrize("seed", range(10))
def test_memory_permutation_invariance(seed):
    torch.manual_seed(seed)
    dec = JointQueryDecoder(num_joints=15, d_model=64, dropout=0.1).eval()
    mem = torch.randn(2, 3, 15, 64)
    perm = torch.randperm(15)
    with torch.no_grad():
        a = decode_joints(mem, dec)
        b = decode_joints(mem[:, :, perm], dec)
    assert ((a - b).norm() / a.norm()).item() < 1e-6


def test_decoder_is_local_in_time():
    dec = JointQueryDecoder(num_joints=15, d_model=32, num_heads=4).eval()
    mem = torch.randn(1, 4, 15, 32)
    mem2 = mem.clone()
    mem2[0, 2] += 1.0
    with torch.no_grad():
        a, b = dec(mem), dec(mem2)
    assert torch.equal(a[0, [0, 1, 3]], b[0, [0, 1, 3]])
    assert not torch.equal(a[0, 2], b[0, 2])


def test_decoder_single_joint():
    dec = JointQueryDecoder(num_joints=1, d_model=16, num_heads=2).eval()
    assert dec(torch.randn(2, 2, 1, 16)).shape == (2, 2, 1, 16)


def test_fusion_shapes_and_tiling():
    fus = MemoryFusion(embed_dim=128, motion_dim=64, d_model=64)
    tokens, motion = torch.randn(2, 5, 15, 128), torch.randn(2, 5, 64)
    out = fuse_memory(tokens, motion, fus)
    assert out.shape == (2, 5, 15, 64)
    # equal tokens per joint must give equal memory rows: the motion term is tiled
    same = fus(tokens[:, :, :1].expand(-1, -1, 15, -1), motion)
    assert torch.allclose(same, same[:, :, :1].expand_as(same))


def test_fusion_motion_perturbation_touches_only_its_frame():
    fus = MemoryFusion(embed_dim=8, motion_dim=4, d_model=8)
    tokens, motion = torch.randn(1, 3, 5, 8), torch.randn(1, 3, 4)
    motion2 = motion.clone()
    motion2[0, 1] += 1.0
    a, b = fus(tokens, motion), fus(tokens, motion2)
    assert torch.equal(a[0, [0, 2]], b[0, [0, 2]])
    assert not torch.equal(a[0, 1], b[0, 1])


def test_fusion_single_stream_and_validation():
    fus = MemoryFusion(embed_dim=8, motion_dim=4, d_model=8)
    assert fus(None, torch.randn(1, 3, 4), num_joints=5).shape == (1, 3, 5, 8)
    assert fus(torch.randn(1, 3, 5, 8), None).shape == (1, 3, 5, 8)
    with pytest.raises(ValueError):
        fus(None, None)
    with pytest.raises(ValueError):
        fus(torch.randn(1, 3, 5, 8), torch.randn(1, 2, 4))


def test_pose_head_shape_offset_and_determinism():
    head = PoseHead(d_model=16).eval()
    feats = torch.randn(2, 3, 15, 16)
    with torch.no_grad():
        a, b = regress_pose(feats, head), regress_pose(feats, head)
    assert a.shape == (2, 3, 15, 3)
    assert torch.equal(a, b)
    poses = torch.randn(2, 3, 15, 3) * 10 + torch.tensor([5.0, -100.0, 300.0])
    valid = torch.ones(2, 3, dtype=torch.bool)
    valid[1, 2] = False
    poses[1, 2] = 1e6
    head.init_offset(poses, valid)
    assert torch.allclose(head.offset, poses[valid].reshape(-1, 3).mean(0))
