import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from egopose.skeleton import (
    FisheyeCamera,
    Keypoints2D,
    SkeletonTopology,
    bone_vectors,
    project_fisheye,
    rasterize_heatmaps,
)

finite = st.floats(-2000, 2000, allow_nan=False)


def test_default_topology_is_a_15_joint_tree(topo):
    assert topo.num_joints == 15
    assert len(topo.bones) == 14
    assert sorted(topo.children) == sorted(set(range(15)) - {topo.root_index})


@pytest.mark.parametrize(
    "bones",
    [
        ((0, 1), (1, 2), (2, 1)),  # joint 1 has two parents
        ((0, 1), (1, 2)),  # too few edges
        ((0, 1), (1, 2), (3, 0)),  # root is a child
    ],
)
def test_invalid_topologies_are_rejected(bones):
    with pytest.raises(ValueError):
        SkeletonTopology(("a", "b", "c", "d"), bones, 0)


def test_topology_json_roundtrip(topo):
    again = SkeletonTopology.from_json(topo.to_json())
    assert again == topo


def test_bone_vectors_zero_pose(topo):
    assert np.array_equal(bone_vectors(np.zeros((15, 3)), topo), np.zeros((14, 3)))


def test_bone_vectors_single_edge():
    t = SkeletonTopology(("p", "c"), ((0, 1),), 0)
    pose = np.array([[0.0, 0.0, 0.0], [0.0, 100.0, 0.0]])
    assert np.array_equal(bone_vectors(pose, t), [[0.0, 100.0, 0.0]])


def test_bone_vectors_telescoping_sum(topo, rng):
    pose = rng.normal(0, 300, (15, 3))
    bones = bone_vectors(pose, topo)
    index = {c: k for k, (_, c) in enumerate(topo.bones)}
    for leaf in topo.leaves():
        path = topo.path_to_root(leaf)[:-1]
        total = sum(bones[index[j]] for j in path)
        np.testing.assert_allclose(total, pose[leaf] - pose[topo.root_index], atol=1e-9)


def test_bone_vectors_rejects_wrong_joint_count(topo):
    with pytest.raises(ValueError):
        bone_vectors(np.zeros((14, 3)), topo)


@given(arrays(np.float64, (15, 3), elements=finite), arrays(np.float64, (3,), elements=finite))
def test_bone_vectors_translation_invariant(pose, offset):
    topo = SkeletonTopology()
    np.testing.assert_allclose(bone_vectors(pose + offset, topo), bone_vectors(pose, topo), atol=1e-9)


CAM = FisheyeCamera(focal=40.0, principal_point=(32.0, 30.0), image_size=(64, 64), max_theta=math.pi / 2)


def test_camera_validation():
    with pytest.raises(ValueError):
        FisheyeCamera(0.0, (32, 32), (64, 64))
    with pytest.raises(ValueError):
        FisheyeCamera(10.0, (70, 32), (64, 64))
    with pytest.raises(ValueError):
        FisheyeCamera(10.0, (32, 32), (64, 64), max_theta=4.0)


def test_project_on_axis_hits_principal_point():
    kp = project_fisheye(np.array([[0.0, 0.0, 500.0]]), CAM)
    np.testing.assert_allclose(kp.uv[0], CAM.principal_point)
    assert kp.visible[0]


def test_project_45_degrees_closed_form():
    z = 700.0
    kp = project_fisheye(np.array([[z, 0.0, z]]), CAM)
    np.testing.assert_allclose(kp.uv[0], [32.0 + 40.0 * math.pi / 4, 30.0], atol=1e-12)


def test_project_beyond_max_theta_is_invisible():
    cam = FisheyeCamera(focal=5.0, principal_point=(32.0, 32.0), image_size=(64, 64), max_theta=1.0)
    eps = 1e-6
    inside = np.array([[math.sin(1.0 - eps), 0.0, math.cos(1.0 - eps)]])
    outside = np.array([[math.sin(1.0 + eps), 0.0, math.cos(1.0 + eps)]])
    assert project_fisheye(inside, cam).visible[0]
    assert not project_fisheye(outside, cam).visible[0]


def test_project_origin_and_behind_camera():
    kp = project_fisheye(np.array([[0.0, 0.0, 0.0], [10.0, 0.0, -100.0], [500.0, 500.0, 10.0]]), CAM)
    assert not kp.visible[0]
    assert not kp.visible[1]
    assert not kp.visible[2]  # forward but lands outside the image


@settings(max_examples=50)
@given(st.floats(-math.pi, math.pi), arrays(np.float64, (6, 3), elements=st.floats(-500, 500)))
def test_projection_rotation_consistent_about_axis(angle, pose):
    pose = pose.copy()
    pose[:, 2] = np.abs(pose[:, 2]) + 50.0
    c, s = math.cos(angle), math.sin(angle)
    Rz = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
    uv0 = project_fisheye(pose, CAM).uv - CAM.principal_point
    uv1 = project_fisheye(pose @ Rz.T, CAM).uv - CAM.principal_point
    np.testing.assert_allclose(uv1, uv0 @ Rz[:2, :2].T, atol=1e-9)


def _kps(u, v, visible=True):
    return Keypoints2D(uv=np.array([[u, v]]), visible=np.array([visible]))


def test_heatmap_peak_at_joint_pixel():
    # image pixel (40, 24) / stride 4 -> heatmap pixel (10, 6)
    hm = rasterize_heatmaps(_kps(40.0, 24.0), (16, 16), 2.0, (64, 64))
    assert hm.maps[0, 6, 10] == 1.0
    assert hm.maps.max() == 1.0
    assert hm.maps.min() >= 0.0


def test_heatmap_value_at_two_sigma():
    sigma = 2.0
    hm = rasterize_heatmaps(_kps(40.0, 24.0), (16, 16), sigma, (64, 64))
    # 2 sigma = 4 heatmap pixels along u; value exp(-(4^2) / (2 * 2^2)) = exp(-2)
    assert abs(hm.maps[0, 6, 14] - math.exp(-2.0)) < 1e-12
    assert abs(hm.maps[0, 2, 10] - math.exp(-2.0)) < 1e-12


def test_heatmap_invisible_joint_is_zero():
    hm = rasterize_heatmaps(_kps(40.0, 24.0, visible=False), (16, 16), 2.0, (64, 64))
    assert not hm.maps.any()


def test_heatmap_center_not_rounded():
    hm = rasterize_heatmaps(_kps(41.0, 24.0), (16, 16), 2.0, (64, 64))
    # continuous center 10.25 -> neither neighbour reaches 1
    assert hm.maps.max() < 1.0
    assert hm.maps[0, 6, 10] > hm.maps[0, 6, 11]


def test_heatmap_radially_symmetric():
    hm = rasterize_heatmaps(_kps(32.0, 32.0), (16, 16), 2.0, (64, 64)).maps[0]
    ii, jj = np.mgrid[0:16, 0:16]
    d2 = (ii - 8) ** 2 + (jj - 8) ** 2
    for r2 in np.unique(d2):
        vals = hm[d2 == r2]
        assert np.ptp(vals) < 1e-15


def test_heatmap_rejects_inconsistent_stride():
    with pytest.raises(ValueError):
        rasterize_heatmaps(_kps(1, 1), (16, 16), 2.0, (64, 48))
    with pytest.raises(ValueError):
        rasterize_heatmaps(_kps(1, 1), (16, 16), 0.0, (64, 64))
