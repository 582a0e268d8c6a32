"""Skeleton topology, fisheye projection and Gaussian heatmap targets."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_JOINTS = (
    "neck",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
    "left_hip",
    "left_knee",
    "left_ankle",
    "left_foot",
    "right_hip",
    "right_knee",
    "right_ankle",
    "right_foot",
)

DEFAULT_BONES = (
    (0, 1), (1, 2), (2, 3),
    (0, 4), (4, 5), (5, 6),
    (0, 7), (7, 8), (8, 9), (9, 10),
    (0, 11), (11, 12), (12, 13), (13, 14),
)


@dataclass(frozen=True)
class SkeletonTopology:
    """Joint names plus directed ``(parent, child)`` bones forming a tree."""

    joint_names: tuple = DEFAULT_JOINTS
    bones: tuple = DEFAULT_BONES
    root_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "joint_names", tuple(self.joint_names))
        object.__setattr__(self, "bones", tuple((int(p), int(c)) for p, c in self.bones))
        self._validate()

    def _validate(self):
        J = len(self.joint_names)
        if J < 1:
            raise ValueError("topology needs at least one joint")
        if not 0 <= self.root_index < J:
            raise ValueError(f"root_index {self.root_index} out of range for {J} joints")
        if len(self.bones) != J - 1:
            raise ValueError(f"a tree over {J} joints has {J - 1} bones, got {len(self.bones)}")
        children = [c for _, c in self.bones]
        for p, c in self.bones:
            if not (0 <= p < J and 0 <= c < J):
                raise ValueError(f"bone ({p}, {c}) references a missing joint")
        if self.root_index in children:
            raise ValueError("root joint cannot be a child")
        if sorted(children) != sorted(set(range(J)) - {self.root_index}):
            raise ValueError("every non-root joint must be the child of exactly one bone")
        # with J-1 edges and unique parents, reachability from the root rules out cycles
        adjacency = {}
        for p, c in self.bones:
            adjacency.setdefault(p, []).append(c)
        seen, stack = {self.root_index}, [self.root_index]
        while stack:
            for c in adjacency.get(stack.pop(), []):
                seen.add(c)
                stack.append(c)
        if len(seen) != J:
            raise ValueError("bone graph is not connected to the root (cycle present)")

    @property
    def num_joints(self) -> int:
        return len(self.joint_names)

    @property
    def parents(self) -> list:
        return [p for p, _ in self.bones]

    @property
    def children(self) -> list:
        return [c for _, c in self.bones]

    def parent_of(self, joint: int):
        for p, c in self.bones:
            if c == joint:
                return p
        return None

    def path_to_root(self, joint: int) -> list:
        """Joint indices from ``joint`` up to and including the root."""
        path = [joint]
        while path[-1] != self.root_index:
            path.append(self.parent_of(path[-1]))
        return path

    def leaves(self) -> list:
        parents = set(self.parents)
        return [j for j in range(self.num_joints) if j not in parents]

    def to_dict(self) -> dict:
        return {
            "joint_names": list(self.joint_names),
            "bones": [list(b) for b in self.bones],
            "root_index": self.root_index,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "SkeletonTopology":
        return cls(tuple(d["joint_names"]), tuple(tuple(b) for b in d["bones"]), int(d["root_index"]))

    @classmethod
    def from_json(cls, text: str) -> "SkeletonTopology":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class FisheyeCamera:
    """Equidistant fisheye camera (``r = focal * theta``), optical axis +z."""

    focal: float
    principal_point: tuple
    image_size: tuple  # (W, H)
    max_theta: float = math.pi / 2

    def __post_init__(self):
        object.__setattr__(self, "principal_point", tuple(float(v) for v in self.principal_point))
        object.__setattr__(self, "image_size", tuple(int(v) for v in self.image_size))
        if not self.focal > 0:
            raise ValueError("focal must be positive")
        W, H = self.image_size
        cx, cy = self.principal_point
        if not (0 <= cx <= W and 0 <= cy <= H):
            raise ValueError("principal point must lie inside the image")
        if not 0 < self.max_theta <= math.pi:
            raise ValueError("max_theta must be in (0, pi]")

    @classmethod
    def for_image(cls, size: int, edge_theta: float = 1.0, max_theta: float = math.pi / 2) -> "FisheyeCamera":
        """Square camera whose image border sits ``edge_theta`` radians off-axis."""
        return cls(focal=(size / 2) / edge_theta, principal_point=(size / 2, size / 2),
                   image_size=(size, size), max_theta=max_theta)

    def to_dict(self) -> dict:
        return {
            "focal": self.focal,
            "principal_point": list(self.principal_point),
            "image_size": list(self.image_size),
            "max_theta": self.max_theta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FisheyeCamera":
        return cls(float(d["focal"]), tuple(d["principal_point"]), tuple(d["image_size"]),
                   float(d["max_theta"]))


@dataclass
class Keypoints2D:
    uv: np.ndarray  # (..., J, 2) pixels
    visible: np.ndarray  # (..., J) bool


@dataclass
class HeatmapStack:
    maps: np.ndarray  # (..., J, Hm, Wm) in [0, 1]
    sigma: float = 2.0
    resolution: tuple = field(init=False)

    def __post_init__(self):
        self.resolution = tuple(self.maps.shape[-2:])


def bone_vectors(pose, topo: SkeletonTopology):
    """Child minus parent for every bone, in bone-list order.

    Works on numpy arrays and torch tensors of shape ``(..., J, 3)``.
    """
    if pose.shape[-1] != 3 or pose.shape[-2] != topo.num_joints:
        raise ValueError(
            f"pose of shape {tuple(pose.shape)} does not match a {topo.num_joints}-joint topology"
        )
    return pose[..., topo.children, :] - pose[..., topo.parents, :]


def project_fisheye(pose, cam: FisheyeCamera) -> Keypoints2D:
    """Project ``(..., J, 3)`` camera-frame joints with the equidistant model."""
    pose = np.asarray(pose, dtype=np.float64)
    x, y, z = pose[..., 0], pose[..., 1], pose[..., 2]
    rho = np.hypot(x, y)
    theta = np.arctan2(rho, z)
    r = cam.focal * theta
    with np.errstate(invalid="ignore", divide="ignore"):
        ux = np.where(rho > 0, x / np.where(rho > 0, rho, 1.0), 0.0)
        uy = np.where(rho > 0, y / np.where(rho > 0, rho, 1.0), 0.0)
    cx, cy = cam.principal_point
    uv = np.stack([cx + r * ux, cy + r * uy], axis=-1)
    W, H = cam.image_size
    at_origin = (rho == 0) & (z == 0)
    visible = (
        (theta <= cam.max_theta)
        & ~at_origin
        & (uv[..., 0] >= 0) & (uv[..., 0] < W)
        & (uv[..., 1] >= 0) & (uv[..., 1] < H)
    )
    uv = np.where(at_origin[..., None], np.array([cx, cy]), uv)
    return Keypoints2D(uv=uv, visible=visible)


def rasterize_heatmaps(kps: Keypoints2D, resolution=(64, 64), sigma: float = 2.0,
                       image_size=(256, 256)) -> HeatmapStack:
    """Unnormalized Gaussian per joint, peak 1 at the (unrounded) scaled joint position."""
    Hm, Wm = resolution
    W, H = image_size
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if W % Wm or H % Hm or W // Wm != H // Hm:
        raise ValueError(f"heatmap {resolution} must divide image {image_size} by one stride")
    stride = W // Wm
    uv = np.asarray(kps.uv, dtype=np.float64) / stride
    vis = np.asarray(kps.visible, dtype=bool)
    us = np.arange(Wm, dtype=np.float64)
    vs = np.arange(Hm, dtype=np.float64)
    du2 = (us - uv[..., 0:1]) ** 2  # (..., J, Wm)
    dv2 = (vs - uv[..., 1:2]) ** 2  # (..., J, Hm)
    maps = np.exp(-(dv2[..., :, None] + du2[..., None, :]) / (2.0 * sigma**2))
    maps = np.where(vis[..., None, None], maps, 0.0)
    return HeatmapStack(maps=maps, sigma=sigma)
