"""Workspace clamping, cable IK/FK, and rate-limited stepping."""

import math
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tersim.kinematics import (
    Pose, Workspace, CableRig, CableLengths, FineStageLimits,
    clamp_to_workspace, inverse_kinematics, forward_kinematics, step_toward,
    quat_rotate, quat_mul, quat_angle,
    InvalidPoseError, OutOfRigError, InconsistentLengthsError,
)

RNG = np.random.default_rng(20260824)


def random_quat(rng):
    q = rng.standard_normal(4)
    return q / np.linalg.norm(q)


def in_workspace_xy(rng, w=None):
    w = w or Workspace()
    return w.center + (rng.random(3) * 2.0 - 1.0) * w.half_extents


# ---------------------------------------------------------------------------
# pose basics

def test_identity_probe_axis_points_into_body():
    p = Pose.identity()
    assert np.allclose(p.probe_axis(), [0.0, 0.0, -1.0])
    assert p.tilt() == 0.0


def test_tilt_matches_constructed_rotation():
    # rotate 0.3 rad about x: probe axis swings in the y-z plane
    half = 0.15
    p = Pose.make((0, 0, 0), (math.cos(half), math.sin(half), 0, 0))
    assert p.tilt() == pytest.approx(0.3, abs=1e-12)


def test_make_rejects_bad_input():
    with pytest.raises(InvalidPoseError):
        Pose.make((0.0, 0.0))
    with pytest.raises(InvalidPoseError):
        Pose.make((0.0, np.nan, 0.0))
    with pytest.raises(InvalidPoseError):
        Pose.make((0, 0, 0), (0, 0, 0, 0))


def test_quat_rotate_matches_matrix():
    for _ in range(50):
        q = random_quat(RNG)
        v = RNG.standard_normal(3)
        w, x, y, z = q
        m = np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])
        assert np.allclose(quat_rotate(q, v), m @ v, atol=1e-12)


# ---------------------------------------------------------------------------
# workspace clamp

def test_clamp_inside_is_identity():
    p = Pose.make((0.05, -0.03, 0.01))
    c = clamp_to_workspace(p)
    assert np.array_equal(c.position, p.position)
    assert np.array_equal(c.orientation, p.orientation)


def test_clamp_clips_position_componentwise():
    p = Pose.make((1.0, -1.0, 0.0))
    c = clamp_to_workspace(p)
    assert np.allclose(c.position, [0.08, -0.065, 0.0])


def test_clamp_limits_tilt_exactly():
    half = math.radians(80) / 2.0
    p = Pose.make((0, 0, 0), (math.cos(half), math.sin(half), 0, 0))
    c = clamp_to_workspace(p)
    assert c.tilt() == pytest.approx(math.radians(45), abs=1e-9)


def test_clamp_preserves_azimuth_and_twist():
    # swing about an oblique axis composed with a twist about z
    rng = np.random.default_rng(7)
    for _ in range(25):
        az = rng.uniform(0, 2 * math.pi)
        tilt = rng.uniform(math.radians(50), math.radians(170))
        twist = rng.uniform(-math.pi, math.pi)
        hs, ht = tilt / 2, twist / 2
        swing = np.array([math.cos(hs), math.sin(hs) * math.cos(az),
                          math.sin(hs) * math.sin(az), 0.0])
        tw = np.array([math.cos(ht), 0.0, 0.0, math.sin(ht)])
        p = Pose.make((0, 0, 0), quat_mul(swing, tw))
        c = clamp_to_workspace(p)
        assert c.tilt() == pytest.approx(math.radians(45), abs=1e-9)
        # the horizontal direction of the probe axis must be unchanged
        a0 = p.probe_axis()
        a1 = c.probe_axis()
        az0 = math.atan2(a0[1], a0[0])
        az1 = math.atan2(a1[1], a1[0])
        assert math.remainder(az0 - az1, 2 * math.pi) == pytest.approx(0.0, abs=1e-9)


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=200, deadline=None)
def test_clamp_idempotent(seed):
    rng = np.random.default_rng(seed)
    p = Pose.make(rng.uniform(-0.3, 0.3, 3), random_quat(rng))
    c1 = clamp_to_workspace(p)
    c2 = clamp_to_workspace(c1)
    assert np.array_equal(c1.position, c2.position)
    assert np.array_equal(c1.orientation, c2.orientation)


def test_clamp_rejects_nonfinite():
    p = Pose(np.array([0.0, 0.0, np.inf]), np.array([1.0, 0, 0, 0]))
    with pytest.raises(InvalidPoseError):
        clamp_to_workspace(p)


def test_workspace_dimensions():
    w = Workspace()
    # 16 cm x 13 cm x 13 cm tracking volume
    assert np.allclose(2 * w.half_extents, [0.16, 0.13, 0.13])
    with pytest.raises(ValueError):
        Workspace(half_extents=np.array([0.1, 0.0, 0.1]))


# ---------------------------------------------------------------------------
# cable IK / FK

def test_ik_lengths_are_euclidean_distances():
    rig = CableRig()
    ls = inverse_kinematics((0.03, -0.07), rig)
    for i in range(4):
        expect = math.hypot(rig.anchors[i, 0] - 0.03, rig.anchors[i, 1] + 0.07)
        assert ls.l[i] == pytest.approx(expect, abs=1e-15)


def test_ik_rejects_out_of_rig():
    with pytest.raises(OutOfRigError):
        inverse_kinematics((0.25, 0.0))
    with pytest.raises(OutOfRigError):
        inverse_kinematics((0.20, 0.0))     # boundary is exclusive


def test_fk_inverts_ik_10k_points_under_1s():
    # acceptance bound: 10,000 random in-rig points, < 1e-9 m, < 1 s
    rig = CableRig()
    rng = np.random.default_rng(12345)
    pts = rng.uniform(-0.19, 0.19, size=(10_000, 2))
    t0 = time.perf_counter()
    worst = 0.0
    for xy in pts:
        rec, _ = forward_kinematics(inverse_kinematics(xy, rig), rig)
        worst = max(worst, float(np.linalg.norm(rec - xy)))
    elapsed = time.perf_counter() - t0
    assert worst < 1e-9, f"worst FK o IK error {worst:.3e} m"
    assert elapsed < 1.0, f"10k roundtrips took {elapsed:.2f} s"


def test_fk_rejects_inconsistent_lengths():
    ls = inverse_kinematics((0.0, 0.0))
    bad = CableLengths.make(ls.l + np.array([0.05, 0.0, 0.0, 0.0]))
    with pytest.raises(InconsistentLengthsError):
        forward_kinematics(bad)


def test_fk_tolerates_tiny_noise():
    ls = inverse_kinematics((0.02, 0.05))
    noisy = CableLengths.make(ls.l + np.array([1e-8, -1e-8, 1e-8, 0.0]))
    xy, resid = forward_kinematics(noisy)
    assert np.linalg.norm(xy - [0.02, 0.05]) < 1e-6
    assert resid < 1e-6


def test_cable_lengths_validation():
    with pytest.raises(ValueError):
        CableLengths.make([1.0, 1.0, 1.0])
    with pytest.raises(ValueError):
        CableLengths.make([1.0, -1.0, 1.0, 1.0])


def test_rig_validation():
    with pytest.raises(ValueError):
        CableRig(anchors=np.array([[0, 0], [1, 0], [2, 0], [0, 1]]))


def test_custom_rig_roundtrip():
    rig = CableRig(anchors=np.array(
        [[0.3, 0.25], [0.3, -0.25], [-0.3, 0.25], [-0.3, -0.25]]))
    xy, _ = forward_kinematics(inverse_kinematics((0.1, -0.2), rig), rig)
    assert np.linalg.norm(xy - [0.1, -0.2]) < 1e-9


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=300, deadline=None)
def test_fk_ik_property(seed):
    rng = np.random.default_rng(seed)
    xy = rng.uniform(-0.199, 0.199, 2)
    rec, resid = forward_kinematics(inverse_kinematics(xy))
    assert np.linalg.norm(rec - xy) < 1e-9
    assert resid < 1e-9


# ---------------------------------------------------------------------------
# step_toward

def test_step_toward_respects_speed_limit():
    a = Pose.identity()
    b = Pose.make((0.05, 0.0, 0.0))
    c = step_toward(a, b, dt=0.01, v_max=0.05, w_max=0.5)
    assert np.linalg.norm(c.position - a.position) == pytest.approx(5e-4, abs=1e-12)


def test_step_toward_lands_exactly_when_close():
    a = Pose.make((0.0, 0.0, 0.0))
    b = Pose.make((2e-4, 0.0, 0.0))
    c = step_toward(a, b, dt=0.01, v_max=0.05, w_max=0.5)
    assert np.array_equal(c.position, b.position)


def test_step_toward_limits_rotation_rate():
    a = Pose.identity()
    half = 0.4
    b = Pose.make((0, 0, 0), (math.cos(half), math.sin(half), 0, 0))
    c = step_toward(a, b, dt=0.01, v_max=0.05, w_max=0.5)
    assert quat_angle(a.orientation, c.orientation) == pytest.approx(
        0.005, abs=1e-9)


def test_step_toward_output_always_in_workspace():
    a = Pose.make((0.07, 0.06, 0.06))
    b = Pose.make((0.5, 0.5, 0.5))      # target far outside
    p = a
    for _ in range(200):
        p = step_toward(p, b, dt=0.01, v_max=0.05, w_max=0.5)
        assert Workspace().contains(p.position)
    assert np.allclose(p.position, [0.08, 0.065, 0.065])


def test_step_toward_rejects_bad_dt():
    with pytest.raises(ValueError):
        step_toward(Pose.identity(), Pose.identity(), dt=0.0, v_max=1, w_max=1)
