import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from onlinefield.errors import InvalidArgument, OutOfDomain
from onlinefield.geometry import (Pose, RecenterTransform, apply_recenter, contract, estimate_recenter,
                                  init_points, uncontract)

finite = st.floats(-1e6, 1e6, allow_nan=False)


def rot_z(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])


def test_contract_hand_values():
    np.testing.assert_allclose(contract([0.5, -0.2, 0.9]), [0.5, -0.2, 0.9])
    # ||x||inf = 2 -> (2 - 1/2) * x / 2
    np.testing.assert_allclose(contract([2.0, 1.0, 0.0]), [1.5, 0.75, 0.0])
    np.testing.assert_allclose(contract([0.0, -4.0, 0.0]), [0.0, -1.75, 0.0])
    # boundary of the unit ball is a fixed point
    np.testing.assert_allclose(contract([1.0, 1.0, -1.0]), [1.0, 1.0, -1.0])


def test_contract_rejects_non_finite():
    with pytest.raises(InvalidArgument):
        contract([np.inf, 0, 0])
    with pytest.raises(InvalidArgument):
        contract([np.nan, 0, 0])


def test_uncontract_domain():
    with pytest.raises(OutOfDomain):
        uncontract([2.0, 0.0, 0.0])
    np.testing.assert_allclose(uncontract([1.5, 0.75, 0.0]), [2.0, 1.0, 0.0])


@settings(max_examples=200, deadline=None)
@given(arrays(float, (3,), elements=finite))
def test_contract_roundtrip_and_bound(x):
    y = contract(x)
    assert np.max(np.abs(y)) < 2.0
    np.testing.assert_allclose(uncontract(y), x, rtol=1e-9, atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(arrays(float, (3,), elements=finite))
def test_contract_keeps_direction_and_order(x):
    y1, y2 = contract(x), contract(2 * x)
    assert np.max(np.abs(y2)) >= np.max(np.abs(y1)) - 1e-12
    assert np.all(np.sign(y1) * np.sign(x) >= 0)


def test_contract_batched_matches_single():
    rng = np.random.default_rng(1)
    x = rng.normal(scale=5, size=(50, 3))
    np.testing.assert_array_equal(contract(x), np.stack([contract(v) for v in x]))


def test_pose_validation():
    Pose(rot_z(0.3), [1, 2, 3])
    with pytest.raises(InvalidArgument):
        Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    with pytest.raises(InvalidArgument):
        Pose(2 * np.eye(3), np.zeros(3))
    with pytest.raises(InvalidArgument):
        Pose(np.eye(3), [np.nan, 0, 0])


def test_recenter_bounds_and_center():
    rng = np.random.default_rng(3)
    poses = [Pose(rot_z(rng.uniform(0, 6)), rng.normal(scale=4, size=3)) for _ in range(10)]
    t = estimate_recenter(poses, (0.5, 2.5))
    moved = [apply_recenter(t, p) for p in poses]
    centers = np.stack([p.center for p in moved])
    assert np.max(np.abs(centers)) <= 1.0 + 1e-12
    # mean frustum midpoint goes to the origin
    mids = centers + 1.5 * np.stack([p.heading for p in moved]) * t.scale
    np.testing.assert_allclose(mids.mean(axis=0), 0.0, atol=1e-12)


def test_recenter_single_pose_unit_offset():
    # one camera at the origin looking down +z with bounds (1, 3): midpoint at z=2,
    # the camera center sits 2 away from it, so scale is 1/2
    t = estimate_recenter([Pose(np.eye(3), np.zeros(3))], (1.0, 3.0))
    np.testing.assert_allclose(t.translation, [0, 0, -2.0])
    assert t.scale == pytest.approx(0.5)


def test_recenter_no_shrink_for_tight_cluster():
    poses = [Pose(np.eye(3), [0.1 * i, 0, 0]) for i in range(3)]
    assert estimate_recenter(poses, (0.1, 0.3)).scale == 1.0


def test_recenter_degenerate_identical_poses():
    p = Pose(np.eye(3), [1.0, 2.0, 3.0])
    t = estimate_recenter([p, p], (1.0, 1.0))
    assert t.scale == 1.0
    with pytest.raises(InvalidArgument):
        estimate_recenter([p, Pose(np.eye(3), np.zeros(3))], (1.0, 1.0))
    with pytest.raises(InvalidArgument):
        estimate_recenter([], (1.0, 2.0))
    with pytest.raises(InvalidArgument):
        estimate_recenter([p], (0.0, 2.0))


def test_recenter_inverse():
    t = RecenterTransform(rot_z(0.7), [1, -2, 0.5], 0.25)
    x = np.random.default_rng(0).normal(size=(20, 3))
    np.testing.assert_allclose(t.inverse().apply_point(t.apply_point(x)), x, atol=1e-12)
    with pytest.raises(InvalidArgument):
        RecenterTransform(scale=0.0)


def test_init_points():
    ps = init_points(1000, seed=5)
    assert len(ps) == 1500
    inner, outer = ps.points[:1000], ps.points[1000:]
    assert np.all(np.abs(inner) <= 1.0)
    assert np.all(np.max(np.abs(outer), axis=1) > 1.0)
    assert np.all(np.max(np.abs(contract(outer)), axis=1) < 2.0)
    np.testing.assert_array_equal(init_points(1000, seed=5).points, ps.points)
    with pytest.raises(InvalidArgument):
        init_points(0, 1)
