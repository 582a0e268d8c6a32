import pytest
import torch

from egopose.motion import (
    MaskedAttentionBlock,
    StaticFeatureExtractor,
    TemporalEncoder,
    TemporalEncoderConfig,
    attention_mask,
    encode_motion,
    global_masked_attention_block,
    local_masked_attention_block,
)


def _block(window, literal=False, seed=0):
    torch.manual_seed(seed)
    return MaskedAttentionBlock(16, num_heads=2, ffn_multiplier=2, window=window, literal=literal).double().eval()


def _x(T=40, seed=1):
    return torch.randn(1, T, 16, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)


def _kick(seed=2):
    # not a constant shift, which LayerNorm would erase
    return 5.0 * torch.randn(16, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)


def test_attention_mask_band():
    m = attention_mask(torch.ones(1, 6, dtype=torch.bool), window=1)[0]
    expected = torch.tensor([[abs(i - j) <= 1 for j in range(6)] for i in range(6)])
    assert torch.equal(m, expected)


@pytest.mark.parametrize("literal", [False, True])
def test_local_block_receptive_field(literal):
    w, t = 8, 20
    blk = _block(w, literal)
    x = _x()
    with torch.no_grad():
        ref = blk(x)
        far = x.clone()
        far[0, t + w + 1] += _kick()
        far[0, t - w - 1] -= _kick(3)
        near = x.clone()
        near[0, t + w] += _kick()
        assert (blk(far)[0, t] - ref[0, t]).abs().max().item() <= 1e-9
        assert (blk(near)[0, t] - ref[0, t]).abs().max().item() > 1e-6


def test_stacked_local_blocks_receptive_field():
    w, t, T = 2, 20, 40
    blocks = [_block(w, seed=s) for s in range(4)]

    def run(z):
        for b in blocks:
            z = b(z)
        return z

    x = _x(T)
    with torch.no_grad():
        ref = run(x)
        far = x.clone()
        far[0, t + 4 * w + 1] += _kick()
        near = x.clone()
        near[0, t + 4 * w] += _kick()
        assert (run(far)[0, t] - ref[0, t]).abs().max().item() <= 1e-9
        assert (run(near)[0, t] - ref[0, t]).abs().max().item() > 1e-9


def test_infinite_window_equals_global_block():
    loc, glob = _block(10**9), _block(None)
    x = _x()
    with torch.no_grad():
        assert torch.allclose(loc(x), glob(x), atol=1e-12)


def test_global_attention_rows_sum_to_one_over_valid_keys():
    blk = global_masked_attention_block(16, num_heads=2).double().eval()
    valid = torch.ones(2, 12, dtype=torch.bool)
    valid[0, 7:] = False
    with torch.no_grad():
        _, w = blk(_x(12).expand(2, -1, -1), valid, return_weights=True)
    rows = w.sum(-1)  # (B, H, T)
    assert torch.allclose(rows[1], torch.ones_like(rows[1]), atol=1e-6)
    assert torch.allclose(rows[0, :, :7], torch.ones_like(rows[0, :, :7]), atol=1e-6)
    assert rows[0, :, 7:].abs().max() == 0
    assert w[0, :, :7, 7:].abs().max() == 0  # padded keys receive no weight


def test_masked_positions_equal_deleted_positions():
    blk = local_masked_attention_block(16, 3, num_heads=2).double().eval()
    x = _x(12)
    valid = torch.ones(1, 12, dtype=torch.bool)
    valid[0, 9:] = False
    with torch.no_grad():
        full = blk(x, valid)
        short = blk(x[:, :9])
    assert torch.allclose(full[:, :9], short, atol=1e-12)
    assert full[:, 9:].abs().max() == 0


def test_single_frame_sequence():
    enc = TemporalEncoder(TemporalEncoderConfig(model_dim=16, num_heads=2)).eval()
    out = enc(torch.randn(3, 1, 16))
    assert out.shape == (3, 1, 16)
    assert torch.isfinite(out).all()


def test_encoder_shape_and_frozen_flag():
    enc = TemporalEncoder(TemporalEncoderConfig())
    assert not any(p.requires_grad for p in enc.parameters())
    assert encode_motion(torch.randn(2, 64, 64), enc).shape == (2, 64, 64)
    trainable = TemporalEncoder(TemporalEncoderConfig(frozen=False))
    assert all(p.requires_grad for p in trainable.parameters())
    with pytest.raises(ValueError):
        enc(torch.randn(1, 4, 32))


def test_frozen_encoder_unchanged_by_training_step():
    enc = TemporalEncoder(TemporalEncoderConfig(model_dim=16, num_heads=2, num_blocks=2, num_local_blocks=1))
    ext = StaticFeatureExtractor(model_dim=16, channels=(4, 8, 8))
    before = {k: v.clone() for k, v in enc.state_dict().items()}
    params = [p for m in (enc, ext) for p in m.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=1e-2)
    ext.train()
    enc.train()
    enc(ext(torch.randn(2, 4, 3, 32, 32))).pow(2).mean().backward()
    opt.step()
    assert all(torch.equal(before[k], v) for k, v in enc.state_dict().items())


def test_static_extractor_updates_only_last_stage_and_projection():
    ext = StaticFeatureExtractor(model_dim=16, channels=(4, 8, 8)).train()
    before = {k: v.clone() for k, v in ext.named_parameters()}
    buffers = {k: v.clone() for k, v in ext.named_buffers() if not k.startswith("stages.2")}
    opt = torch.optim.SGD([p for p in ext.parameters() if p.requires_grad], lr=0.1)
    out = ext(torch.randn(2, 3, 3, 32, 32))
    assert out.shape == (2, 3, 16)
    out.pow(2).mean().backward()
    opt.step()
    for k, v in ext.named_parameters():
        changed = not torch.equal(before[k], v)
        assert changed == (k.startswith(("stages.2", "proj", "norm"))), k
    for k, v in ext.named_buffers():
        if k in buffers and not k.startswith(("norm",)):
            assert torch.equal(buffers[k], v), k
