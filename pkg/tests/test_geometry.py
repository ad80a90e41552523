import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from holodeck.geometry import (
    Pose,
    matrix_to_quat,
    quat_from_axis_angle,
    quat_mul,
    quat_normalize,
    quat_to_matrix,
    random_quat,
    rotation_angle_between,
)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_quat_matrix_round_trip(seed):
    rng = np.random.default_rng(seed)
    q = random_quat(rng)
    R = quat_to_matrix(q)
    assert abs(np.linalg.det(R) - 1.0) < 1e-12
    q2 = matrix_to_quat(R)
    assert rotation_angle_between(q, q2) < 1e-9


def test_matrix_to_quat_near_pi():
    # Shepperd branches: rotations near 180 degrees about each axis
    for axis in np.eye(3):
        q = quat_from_axis_angle(axis, np.pi - 1e-7)
        q2 = matrix_to_quat(quat_to_matrix(q))
        assert rotation_angle_between(q, q2) < 1e-7


def test_quat_mul_matches_matrix_product():
    rng = np.random.default_rng(5)
    a, b = random_quat(rng), random_quat(rng)
    Rab = quat_to_matrix(quat_normalize(quat_mul(a, b)))
    assert np.allclose(Rab, quat_to_matrix(a) @ quat_to_matrix(b), atol=1e-12)


def test_pose_apply_inverse():
    rng = np.random.default_rng(6)
    p = Pose(rng.normal(size=3), random_quat(rng))
    pts = rng.normal(size=(10, 3))
    back = p.inverse().apply(p.apply(pts))
    assert np.allclose(back, pts, atol=1e-12)


def test_pose_compose():
    rng = np.random.default_rng(7)
    a = Pose(rng.normal(size=3), random_quat(rng))
    b = Pose(rng.normal(size=3), random_quat(rng))
    pts = rng.normal(size=(4, 3))
    assert np.allclose(a.compose(b).apply(pts), a.apply(b.apply(pts)), atol=1e-12)


def test_pose_rejects_unnormalized():
    with pytest.raises(ValueError):
        Pose(np.zeros(3), np.array([1.0, 0.1, 0.0, 0.0]))
