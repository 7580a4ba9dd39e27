"""Pinhole projection and rigid-pose algebra."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brickxar.errors import DepthError
from brickxar.geometry import (
    Behind,
    CameraIntrinsics,
    DEFAULT_INTRINSICS,
    Pose6DoF,
    pose_compose,
    pose_invert,
    project,
    rotation_about_axis,
    unproject,
)

K = CameraIntrinsics(800.0, 800.0, 480.0, 360.0, 960, 720)


def random_pose(rng):
    axis = rng.normal(size=3)
    r = rotation_about_axis(axis / np.linalg.norm(axis), rng.uniform(0, np.pi))
    return Pose6DoF(r, rng.uniform(-200, 200, size=3))


class TestProject:
    def test_principal_point(self):
        u, v, d = project(np.array([0.0, 0.0, 400.0]), Pose6DoF.identity(), K)
        assert (u, v, d) == (K.cx, K.cy, 400.0)

    def test_behind_near_plane(self):
        out = project(np.array([0.0, 0.0, K.near_mm / 2]), Pose6DoF.identity(), K)
        assert out is Behind

    def test_hand_computed_point(self):
        # fx=fy=800, cx=480, cy=360: (100, 0, 400) -> u = 800*100/400 + 480
        u, v, d = project(np.array([100.0, 0.0, 400.0]), Pose6DoF.identity(), K)
        assert (u, v, d) == (680.0, 360.0, 400.0)


class TestUnproject:
    def test_inverse_of_project_example(self):
        p = unproject(680.0, 360.0, 400.0, Pose6DoF.identity(), K)
        np.testing.assert_allclose(p, [100.0, 0.0, 400.0], atol=1e-9)

    def test_principal_ray(self):
        p = unproject(K.cx, K.cy, 250.0, Pose6DoF.identity(), K)
        np.testing.assert_allclose(p, [0.0, 0.0, 250.0], atol=1e-9)

    def test_nonpositive_depth(self):
        with pytest.raises(DepthError):
            unproject(480.0, 360.0, 0.0, Pose6DoF.identity(), K)

    def test_round_trip_bulk(self):
        # 10^4 random points with z in (near, 10^4): relative error <= 1e-9
        rng = np.random.default_rng(0)
        pose = random_pose(rng)
        n = 10_000
        z = rng.uniform(K.near_mm + 1e-3, 1e4, size=n)
        x = (rng.uniform(0, K.width, size=n) - K.cx) * z / K.fx
        y = (rng.uniform(0, K.height, size=n) - K.cy) * z / K.fy
        cam = np.stack([x, y, z], axis=1)
        world = pose_invert(pose).apply(cam)
        for p in world[:200]:
            u, v, d = project(p, pose, K)
            q = unproject(u, v, d, pose, K)
            assert np.linalg.norm(q - p) <= 1e-9 * max(1.0, np.linalg.norm(p))


class TestPoseAlgebra:
    def test_identity_left_unit(self):
        rng = np.random.default_rng(1)
        p = random_pose(rng)
        assert pose_compose(Pose6DoF.identity(), p).almost_equal(p)

    def test_compose_with_inverse(self):
        rng = np.random.default_rng(2)
        p = random_pose(rng)
        assert pose_compose(p, pose_invert(p)).almost_equal(Pose6DoF.identity())

    def test_translations_add(self):
        a = Pose6DoF(np.eye(3), np.array([1.0, 2.0, 3.0]))
        b = Pose6DoF(np.eye(3), np.array([10.0, 20.0, 30.0]))
        np.testing.assert_allclose(
            pose_compose(a, b).translation, [11.0, 22.0, 33.0], atol=1e-12
        )

    @given(st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_associative(self, seed):
        rng = np.random.default_rng(seed)
        a, b, c = (random_pose(rng) for _ in range(3))
        lhs = pose_compose(pose_compose(a, b), c)
        rhs = pose_compose(a, pose_compose(b, c))
        assert lhs.almost_equal(rhs, tol=1e-9)

    @given(st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_isometry(self, seed):
        rng = np.random.default_rng(seed)
        pose = random_pose(rng)
        p, q = rng.uniform(-500, 500, size=(2, 3))
        before = np.linalg.norm(p - q)
        after = np.linalg.norm(pose.apply(p[None])[0] - pose.apply(q[None])[0])
        assert abs(before - after) <= 1e-9 * max(1.0, before)


class TestValidation:
    def test_non_orthonormal_rejected(self):
        with pytest.raises(Exception):
            Pose6DoF(np.eye(3) * 1.5, np.zeros(3))

    def test_intrinsics_invariants(self):
        with pytest.raises(Exception):
            CameraIntrinsics(-1.0, 800.0, 480.0, 360.0, 960, 720)
        assert DEFAULT_INTRINSICS.width == 960 and DEFAULT_INTRINSICS.height == 720
        assert DEFAULT_INTRINSICS.fx == 800.0 and DEFAULT_INTRINSICS.near_mm == 10.0
