"""Synthetic egocentric sequences, their on-disk format, and sliding-window batching."""

from __future__ import annotations

import colorsys
import json
import os
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .skeleton import FisheyeCamera, Keypoints2D, SkeletonTopology, project_fisheye

FORMAT_VERSION = 1

# rest offsets child - parent (mm) in the camera frame: x right, y forward, z down the optical axis
_REST_NECK = np.array([0.0, -120.0, 160.0])
_REST_OFFSETS = {
    "left_shoulder": (-170.0, 0.0, 30.0),
    "left_elbow": (-30.0, 20.0, 280.0),
    "left_wrist": (0.0, 60.0, 250.0),
    "right_shoulder": (170.0, 0.0, 30.0),
    "right_elbow": (30.0, 20.0, 280.0),
    "right_wrist": (0.0, 60.0, 250.0),
    "left_hip": (-100.0, -20.0, 520.0),
    "left_knee": (0.0, 30.0, 420.0),
    "left_ankle": (0.0, -20.0, 420.0),
    "left_foot": (0.0, 120.0, 60.0),
    "right_hip": (100.0, -20.0, 520.0),
    "right_knee": (0.0, 30.0, 420.0),
    "right_ankle": (0.0, -20.0, 420.0),
    "right_foot": (0.0, 120.0, 60.0),
}
# peak swing (radians) about the lateral (x) and forward (y) axes per child joint
_SWING = {
    "shoulder": (0.10, 0.05),
    "elbow": (0.6, 0.2),
    "wrist": (0.5, 0.2),
    "hip": (0.10, 0.05),
    "knee": (0.45, 0.1),
    "ankle": (0.4, 0.1),
    "foot": (0.3, 0.1),
}


def _rot_x(a):
    c, s = np.cos(a), np.sin(a)
    R = np.zeros(a.shape + (3, 3))
    R[..., 0, 0] = 1
    R[..., 1, 1], R[..., 1, 2] = c, -s
    R[..., 2, 1], R[..., 2, 2] = s, c
    return R


def _rot_y(a):
    c, s = np.cos(a), np.sin(a)
    R = np.zeros(a.shape + (3, 3))
    R[..., 1, 1] = 1
    R[..., 0, 0], R[..., 0, 2] = c, s
    R[..., 2, 0], R[..., 2, 2] = -s, c
    return R


def _rot_z(a):
    c, s = np.cos(a), np.sin(a)
    R = np.zeros(a.shape + (3, 3))
    R[..., 2, 2] = 1
    R[..., 0, 0], R[..., 0, 1] = c, -s
    R[..., 1, 0], R[..., 1, 1] = s, c
    return R


def joint_colors(num_joints: int) -> np.ndarray:
    """Distinct saturated RGB colors (uint8), one per joint."""
    return np.array(
        [[int(255 * v) for v in colorsys.hsv_to_rgb(j / num_joints, 0.9, 1.0)] for j in range(num_joints)],
        dtype=np.uint8,
    )


@dataclass
class SequenceRecord:
    frames: np.ndarray  # (T, H, W, 3) uint8
    poses: np.ndarray  # (T, J, 3) mm
    camera: FisheyeCamera
    topology: SkeletonTopology = field(default_factory=SkeletonTopology)
    subject_id: str = "s0"
    action_id: str = "a0"
    frame_rate: float = 30.0
    record_id: str = "record"
    keypoints: Keypoints2D = field(init=False)

    def __post_init__(self):
        if self.frames.dtype != np.uint8 or self.frames.ndim != 4 or self.frames.shape[-1] != 3:
            raise ValueError("frames must be a (T, H, W, 3) uint8 array")
        if self.poses.shape != (len(self.frames), self.topology.num_joints, 3):
            raise ValueError(f"poses {self.poses.shape} do not match {len(self.frames)} frames")
        if not np.isfinite(self.poses).all():
            raise ValueError("poses must be finite")
        self.keypoints = project_fisheye(self.poses, self.camera)

    @property
    def num_frames(self) -> int:
        return len(self.frames)


def _rest_offsets(topo: SkeletonTopology, rng):
    offsets = np.zeros((len(topo.bones), 3))
    for k, (_, c) in enumerate(topo.bones):
        name = topo.joint_names[c]
        if name in _REST_OFFSETS:
            offsets[k] = _REST_OFFSETS[name]
        else:
            offsets[k] = rng.normal(0, 60, 3) + (0.0, 0.0, 250.0)
    return offsets


def _swing(name):
    for key, amp in _SWING.items():
        if key in name:
            return amp
    return (0.3, 0.1)


def animate_skeleton(rng, num_frames, topo: SkeletonTopology, frame_rate=30.0) -> np.ndarray:
    """Forward kinematics of sinusoidal joint swings; bone lengths fixed per sequence."""
    t = np.arange(num_frames) / frame_rate
    offsets = _rest_offsets(topo, rng)
    offsets *= rng.uniform(0.9, 1.1) * rng.uniform(0.92, 1.08, size=(len(offsets), 1))
    freq = rng.uniform(0.3, 0.8)  # shared gait frequency
    poses = np.zeros((num_frames, topo.num_joints, 3))
    sway = rng.uniform(-40, 40, 3) * np.sin(2 * np.pi * rng.uniform(0.1, 0.4) * t[:, None] + rng.uniform(0, 2 * np.pi, 3))
    poses[:, topo.root_index] = _REST_NECK + sway
    frames_rot = {topo.root_index: _rot_z(0.15 * np.sin(2 * np.pi * 0.25 * t + rng.uniform(0, 2 * np.pi)))}
    order, pending = [], [topo.root_index]
    while pending:
        p = pending.pop(0)
        for k, (pp, c) in enumerate(topo.bones):
            if pp == p:
                order.append(k)
                pending.append(c)
    for k in order:
        p, c = topo.bones[k]
        ax, ay = _swing(topo.joint_names[c])
        phase = rng.uniform(0, 2 * np.pi, 2)
        f = freq * rng.uniform(0.8, 1.25)
        local = _rot_x(ax * np.sin(2 * np.pi * f * t + phase[0])) @ _rot_y(ay * np.sin(2 * np.pi * f * t + phase[1]))
        frames_rot[c] = frames_rot[p] @ local
        poses[:, c] = poses[:, p] + np.einsum("tij,j->ti", frames_rot[c], offsets[k])
    return poses


def _background(rng, size):
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = np.full((size, size, 3), 70.0)
    for _ in range(4):
        kx, ky = rng.uniform(1, 6, 2)
        ph = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(5, 15, 3)
        img += amp * np.sin(2 * np.pi * (kx * xx + ky * yy) + ph)[..., None]
    return img


def render_frames(keypoints: Keypoints2D, poses, topo: SkeletonTopology, image_size, rng) -> np.ndarray:
    """Disc splats per joint (joint-coded colors) and gray limb strokes over a textured background."""
    W, H = image_size
    T, J = keypoints.visible.shape
    base = _background(rng, W)[:H]
    colors = joint_colors(J).astype(np.float64)
    radius = max(1.5, W / 24)
    yy, xx = np.mgrid[0:H, 0:W] + 0.5
    frames = np.empty((T, H, W, 3), dtype=np.uint8)
    samples = np.linspace(0, 1, 12)
    for t in range(T):
        img = base.copy()
        uv, vis = keypoints.uv[t], keypoints.visible[t]
        for p, c in topo.bones:
            if vis[p] and vis[c]:
                pts = uv[p] + samples[:, None] * (uv[c] - uv[p])
                for u, v in pts:
                    m = (xx - u) ** 2 + (yy - v) ** 2 <= (radius * 0.5) ** 2
                    img[m] = 160.0
        for j in np.argsort(-poses[t, :, 2]):  # far joints first
            if vis[j]:
                m = (xx - uv[j, 0]) ** 2 + (yy - uv[j, 1]) ** 2 <= radius**2
                img[m] = colors[j]
        frames[t] = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return frames


def generate_synthetic_sequence(seed, num_frames, topo: SkeletonTopology = None, cam: FisheyeCamera = None,
                                frame_rate=30.0, image_size=64) -> SequenceRecord:
    """Deterministic procedural sequence for ``seed``."""
    if num_frames < 1:
        raise ValueError("num_frames must be >= 1")
    topo = topo or SkeletonTopology()
    cam = cam or FisheyeCamera.for_image(image_size)
    rng = np.random.default_rng(seed)
    poses = animate_skeleton(rng, num_frames, topo, frame_rate)
    kps = project_fisheye(poses, cam)
    frames = render_frames(kps, poses, topo, cam.image_size, rng)
    return SequenceRecord(frames=frames, poses=poses, camera=cam, topology=topo,
                          subject_id=f"subject_{seed % 5}", action_id=f"action_{seed % 7}",
                          frame_rate=frame_rate, record_id=f"seq_{seed:05d}")


def channel_statistics(frames) -> tuple:
    """Per-channel mean and std of ``(..., H, W, 3)`` uint8 frames on the [0, 1] scale."""
    x = np.asarray(frames, dtype=np.float64).reshape(-1, 3) / 255.0
    return x.mean(axis=0), x.std(axis=0)


# --- on-disk format ---------------------------------------------------------

def save_record(record: SequenceRecord, directory) -> Path:
    """Write ``manifest.json``, ``frames.bin`` and ``poses.bin`` atomically (temp dir + rename)."""
    directory = Path(directory)
    directory.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{directory.name}.", dir=directory.parent))
    try:
        mean, std = channel_statistics(record.frames)
        manifest = {
            "format_version": FORMAT_VERSION,
            "record_id": record.record_id,
            "subject_id": record.subject_id,
            "action_id": record.action_id,
            "frame_rate": record.frame_rate,
            "camera": record.camera.to_dict(),
            "topology": record.topology.to_dict(),
            "frames": {"file": "frames.bin", "shape": list(record.frames.shape), "dtype": "uint8", "order": "C"},
            "poses": {"file": "poses.bin", "shape": list(record.poses.shape), "dtype": "<f4", "order": "C",
                      "unit": "mm"},
            "channel_mean": mean.tolist(),
            "channel_std": std.tolist(),
        }
        np.ascontiguousarray(record.frames).tofile(tmp / "frames.bin")
        np.ascontiguousarray(record.poses, dtype="<f4").tofile(tmp / "poses.bin")
        (tmp / "manifest.json").write_text(json.dumps(manifest, indent=2))
        if directory.exists():
            shutil.rmtree(directory)
        os.rename(tmp, directory)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return directory


def load_record(directory) -> SequenceRecord:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported record format {manifest.get('format_version')!r} in {directory}")
    fm, pm = manifest["frames"], manifest["poses"]
    frames = np.fromfile(directory / fm["file"], dtype=np.uint8).reshape(fm["shape"])
    poses = np.fromfile(directory / pm["file"], dtype="<f4").reshape(pm["shape"]).astype(np.float64)
    return SequenceRecord(
        frames=frames, poses=poses,
        camera=FisheyeCamera.from_dict(manifest["camera"]),
        topology=SkeletonTopology.from_dict(manifest["topology"]),
        subject_id=manifest["subject_id"], action_id=manifest["action_id"],
        frame_rate=manifest["frame_rate"], record_id=manifest["record_id"],
    )


def write_dataset(root, num_records=8, num_frames=64, seed=0, image_size=64, test_fraction=0.25):
    """Generate a dataset directory with ``index.json`` and one sub-directory per record."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    num_test = int(round(num_records * test_fraction))
    entries, train_frames = [], []
    for i in range(num_records):
        rec = generate_synthetic_sequence(seed * 100_003 + i, num_frames, image_size=image_size)
        split = "test" if i >= num_records - num_test else "train"
        save_record(rec, root / rec.record_id)
        entries.append({"dir": rec.record_id, "split": split})
        if split == "train":
            train_frames.append(rec.frames)
    mean, std = channel_statistics(np.concatenate(train_frames) if train_frames else rec.frames)
    index = {
        "format_version": FORMAT_VERSION,
        "image_size": image_size,
        "records": entries,
        "channel_mean": mean.tolist(),
        "channel_std": std.tolist(),
        "topology": SkeletonTopology().to_dict(),
    }
    (root / "index.json").write_text(json.dumps(index, indent=2))
    return index


def load_index(root) -> dict:
    path = Path(root) / "index.json"
    if not path.exists():
        raise FileNotFoundError(
            f"no dataset at {root} (missing index.json); create one with `egopose generate-data --out {root}`"
        )
    return json.loads(path.read_text())


def load_split(root, split) -> list:
    index = load_index(root)
    return [load_record(Path(root) / e["dir"]) for e in index["records"] if e["split"] == split]


# --- windows ----------------------------------------------------------------

@dataclass(frozen=True)
class WindowConfig:
    length_T: int = 64
    stride: int = 32

    def __post_init__(self):
        if not 1 <= self.stride <= self.length_T:
            raise ValueError("need 1 <= stride <= length_T")


@dataclass
class Window:
    record_id: str
    start: int
    frames: np.ndarray  # (T, H, W, 3) uint8, zero on padding
    poses: np.ndarray  # (T, J, 3)
    valid_mask: np.ndarray  # (T,) bool
    frame_index: np.ndarray  # (T,) record frame index, -1 on padding


def window_starts(num_frames: int, cfg: WindowConfig) -> list:
    if num_frames <= cfg.length_T:
        return [0]
    starts = list(range(0, num_frames - cfg.length_T + 1, cfg.stride))
    if starts[-1] + cfg.length_T < num_frames:
        starts.append(num_frames - cfg.length_T)
    return starts


def sliding_windows(record: SequenceRecord, cfg: WindowConfig = WindowConfig()) -> list:
    """Fixed-length windows; the tail window is right-aligned, short records are end-padded."""
    N, T = record.num_frames, cfg.length_T
    out = []
    for s in window_starts(N, cfg):
        n = min(T, N - s)
        frames = np.zeros((T,) + record.frames.shape[1:], dtype=np.uint8)
        poses = np.zeros((T,) + record.poses.shape[1:], dtype=record.poses.dtype)
        frames[:n] = record.frames[s:s + n]
        poses[:n] = record.poses[s:s + n]
        valid = np.zeros(T, dtype=bool)
        valid[:n] = True
        idx = np.full(T, -1, dtype=np.int64)
        idx[:n] = np.arange(s, s + n)
        out.append(Window(record.record_id, s, frames, poses, valid, idx))
    return out


def normalize_frames(frames, size=None, mean=None, std=None) -> np.ndarray:
    """``(..., H, W, 3)`` uint8 -> ``(..., 3, size, size)`` float32.

    Resizes (bilinear) when needed, scales to [0, 1] and, when statistics are
    given, standardizes each channel.
    """
    frames = np.asarray(frames)
    lead = frames.shape[:-3]
    H, W = frames.shape[-3:-1]
    x = torch.from_numpy(frames.reshape(-1, H, W, 3).astype(np.float32) / 255.0).permute(0, 3, 1, 2)
    if size is not None and (H, W) != (size, size):
        x = F.interpolate(x, size=(size, size), mode="bilinear", align_corners=False, antialias=True)
    x = x.numpy()
    if mean is not None:
        mean = np.asarray(mean, dtype=np.float32).reshape(1, 3, 1, 1)
        std = np.asarray(std, dtype=np.float32).reshape(1, 3, 1, 1)
        x = (x - mean) / std
    return np.ascontiguousarray(x.reshape(lead + x.shape[1:]), dtype=np.float32)


def collate_windows(windows, size=None, mean=None, std=None):
    """Stack windows into ``frames (B,T,3,S,S)``, ``poses (B,T,J,3)``, ``valid (B,T)`` tensors."""
    frames = normalize_frames(np.stack([w.frames for w in windows]), size, mean, std)
    valid = np.stack([w.valid_mask for w in windows])
    frames = frames * valid[:, :, None, None, None]
    return (
        torch.from_numpy(np.ascontiguousarray(frames)),
        torch.from_numpy(np.stack([w.poses for w in windows]).astype(np.float32)),
        torch.from_numpy(valid),
    )
