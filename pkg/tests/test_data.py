import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from egopose.data import (
    WindowConfig,
    channel_statistics,
    collate_windows,
    generate_synthetic_sequence,
    load_index,
    load_record,
    load_split,
    normalize_frames,
    save_record,
    sliding_windows,
    window_starts,
    write_dataset,
)
from egopose.skeleton import bone_vectors, project_fisheye


def test_generator_is_deterministic():
    a = generate_synthetic_sequence(11, 12)
    b = generate_synthetic_sequence(11, 12)
    c = generate_synthetic_sequence(12, 12)
    assert np.array_equal(a.frames, b.frames) and np.array_equal(a.poses, b.poses)
    assert not np.array_equal(a.poses, c.poses)


def test_generated_sequence_contract():
    rec = generate_synthetic_sequence(3, 30)
    assert rec.frames.shape == (30, 64, 64, 3) and rec.frames.dtype == np.uint8
    assert rec.poses.shape == (30, 15, 3)
    lengths = np.linalg.norm(bone_vectors(rec.poses, rec.topology), axis=-1)
    assert np.abs(lengths - lengths[0]).max() < 1e-6
    kp = project_fisheye(rec.poses, rec.camera)
    assert np.array_equal(kp.uv, rec.keypoints.uv)
    assert kp.visible.mean() > 0.8  # the body is mostly inside the fisheye frame


def test_frames_show_the_body():
    """Pixels at visible joints differ from the textured background on average."""
    rec = generate_synthetic_sequence(5, 4)
    kp = rec.keypoints
    hits = []
    for t in range(4):
        for j in np.flatnonzero(kp.visible[t]):
            u, v = np.clip(np.round(kp.uv[t, j]).astype(int), 0, 63)
            hits.append(rec.frames[t, v, u].astype(float).max())
    assert np.mean(hits) > rec.frames.mean()


def test_record_roundtrip(tmp_path):
    rec = generate_synthetic_sequence(2, 5)
    save_record(rec, tmp_path / "r")
    again = load_record(tmp_path / "r")
    assert np.array_equal(again.frames, rec.frames)
    np.testing.assert_allclose(again.poses, rec.poses, atol=1e-3)  # float32 on disk
    assert again.camera == rec.camera and again.topology == rec.topology
    manifest = json.loads((tmp_path / "r" / "manifest.json").read_text())
    assert manifest["poses"]["dtype"] == "<f4" and manifest["poses"]["unit"] == "mm"
    assert not [p for p in tmp_path.iterdir() if p.name.startswith(".")]  # no temp leftovers


def test_dataset_index_and_splits(tmp_path):
    index = write_dataset(tmp_path, num_records=4, num_frames=6, seed=1, test_fraction=0.25)
    assert [e["split"] for e in index["records"]] == ["train", "train", "train", "test"]
    train = load_split(tmp_path, "train")
    mean, std = channel_statistics(np.concatenate([r.frames for r in train]))
    np.testing.assert_allclose(load_index(tmp_path)["channel_mean"], mean)
    assert len(load_split(tmp_path, "test")) == 1


def test_missing_dataset_message(tmp_path):
    with pytest.raises(FileNotFoundError, match="generate-data"):
        load_index(tmp_path / "nope")


def test_window_starts_examples():
    cfg = WindowConfig(64, 32)
    assert window_starts(128, cfg) == [0, 32, 64]
    assert window_starts(64, cfg) == [0]
    assert window_starts(100, cfg) == [0, 32, 36]


def test_short_record_is_end_padded():
    rec = generate_synthetic_sequence(0, 10)
    (w,) = sliding_windows(rec, WindowConfig(64, 32))
    assert w.valid_mask.sum() == 10 and not w.valid_mask[10:].any()
    assert not w.frames[10:].any() and not w.poses[10:].any()
    assert (w.frame_index[10:] == -1).all()


@given(st.integers(1, 200), st.integers(1, 64), st.data())
def test_windows_cover_every_frame(n, T, data):
    stride = data.draw(st.integers(1, T))
    cfg = WindowConfig(T, stride)
    starts = window_starts(n, cfg)
    covered = np.zeros(n, dtype=int)
    for s in starts:
        covered[s:min(n, s + T)] += 1
        assert s + T <= max(n, T)
    assert (covered >= 1).all()
    assert starts == sorted(set(starts))


def test_overlapping_windows_agree():
    rec = generate_synthetic_sequence(4, 50)
    for w in sliding_windows(rec, WindowConfig(16, 8)):
        idx = w.frame_index[w.valid_mask]
        assert np.array_equal(w.frames[w.valid_mask], rec.frames[idx])
        assert np.array_equal(w.poses[w.valid_mask], rec.poses[idx])


def test_normalization_statistics():
    rec = generate_synthetic_sequence(8, 20)
    mean, std = channel_statistics(rec.frames)
    x = normalize_frames(rec.frames, None, mean, std)
    assert x.shape == (20, 3, 64, 64) and x.dtype == np.float32
    np.testing.assert_allclose(x.mean(axis=(0, 2, 3)), 0.0, atol=1e-2)
    np.testing.assert_allclose(x.std(axis=(0, 2, 3)), 1.0, atol=1e-2)
    assert normalize_frames(rec.frames[:2], 32).shape == (2, 3, 32, 32)


def test_collate_zeroes_padding():
    rec = generate_synthetic_sequence(0, 10)
    windows = sliding_windows(rec, WindowConfig(16, 8))
    frames, poses, valid = collate_windows(windows, None, [0.5] * 3, [0.25] * 3)
    assert frames.shape == (1, 16, 3, 64, 64) and poses.shape == (1, 16, 15, 3)
    assert frames[0, 10:].abs().max() == 0
    assert valid.sum() == 10
