"""Geometry of the master workspace and the two-stage cable-driven slave.

The gross stage is a ring pulled over the body surface (the z=0 plane) by
four straps anchored at the corners of a rectangle; the fine stage tilts
the probe and translates it along z.  Everything here is a pure function
over value types.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class KinematicsError(Exception):
    pass


class InvalidPoseError(KinematicsError):
    """Pose contains non-finite components or a degenerate quaternion."""


class OutOfRigError(KinematicsError):
    """Requested ring position lies outside the strap anchor rectangle."""


class InconsistentLengthsError(KinematicsError):
    """Strap lengths do not agree on any ring position (slack/taut conflict)."""


QUAT_NORM_TOL = 1e-9


def _normalize_quat(q: np.ndarray) -> np.ndarray:
    n = math.sqrt(float(np.dot(q, q)))
    if n == 0.0 or not math.isfinite(n):
        raise InvalidPoseError("degenerate quaternion")
    return q / n


def quat_mul(a, b):
    """Hamilton product, scalar-first."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conj(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_rotate(q, v):
    """Rotate vector v by unit quaternion q."""
    qv = np.array([0.0, v[0], v[1], v[2]])
    r = quat_mul(quat_mul(q, qv), quat_conj(q))
    return r[1:]


def quat_slerp(a, b, t):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    dot = float(np.dot(a, b))
    if dot < 0.0:
        b = -b
        dot = -dot
    if dot > 1.0 - 1e-12:
        out = a + t * (b - a)
        return _normalize_quat(out)
    theta = math.acos(max(-1.0, min(1.0, dot)))
    s = math.sin(theta)
    return (math.sin((1.0 - t) * theta) / s) * a + (math.sin(t * theta) / s) * b


def quat_angle(a, b) -> float:
    """Rotation angle (radians) taking orientation a to b."""
    dot = abs(float(np.dot(a, b)))
    return 2.0 * math.acos(max(-1.0, min(1.0, dot)))


@dataclass(frozen=True)
class Pose:
    """6-dof probe state: position in meters, scalar-first unit quaternion.

    Exam frame: x lateral, y craniocaudal, z out of the body; the body
    surface is the plane z = 0.
    """

    position: np.ndarray
    orientation: np.ndarray

    @staticmethod
    def make(position, orientation=(1.0, 0.0, 0.0, 0.0)) -> "Pose":
        p = np.asarray(position, dtype=float)
        q = np.asarray(orientation, dtype=float)
        if p.shape != (3,) or q.shape != (4,):
            raise InvalidPoseError("position must be 3-vector, orientation 4-vector")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
            raise InvalidPoseError("non-finite pose components")
        return Pose(p, _normalize_quat(q))

    @staticmethod
    def identity() -> "Pose":
        return Pose.make((0.0, 0.0, 0.0))

    def probe_axis(self) -> np.ndarray:
        """Direction the probe points: -z (into the body) at identity."""
        return quat_rotate(self.orientation, np.array([0.0, 0.0, -1.0]))

    def tilt(self) -> float:
        """Angle between probe axis and straight-down (-z), radians."""
        c = -float(self.probe_axis()[2])
        return math.acos(max(-1.0, min(1.0, c)))


@dataclass(frozen=True)
class Workspace:
    """Axis-aligned master workspace box.

    Defaults give the 16 cm x 13 cm x 13 cm tracking volume: 16 cm on x
    (lateral), 13 cm on y and z.
    """

    half_extents: np.ndarray = field(
        default_factory=lambda: np.array([0.08, 0.065, 0.065]))
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if not np.all(np.asarray(self.half_extents) > 0):
            raise ValueError("half_extents must be strictly positive")

    def contains(self, position, tol: float = 1e-12) -> bool:
        d = np.abs(np.asarray(position) - self.center) - self.half_extents
        return bool(np.all(d <= tol))


@dataclass(frozen=True)
class CableRig:
    """Four strap anchors in the z=0 plane, straps meeting at the ring center.

    Default anchors sit at (+-0.20, +-0.20) m so the workspace XY box fits
    inside with margin.  Anchor order: (+x,+y), (+x,-y), (-x,+y), (-x,-y).
    """

    anchors: np.ndarray = field(default_factory=lambda: np.array(
        [[0.20, 0.20], [0.20, -0.20], [-0.20, 0.20], [-0.20, -0.20]]))
    ring_attach_radius: float = 0.0

    def __post_init__(self):
        a = np.asarray(self.anchors)
        if a.shape != (4, 2):
            raise ValueError("need exactly four 2D anchors")
        # convex position: no three collinear
        for i in range(4):
            for j in range(i + 1, 4):
                for k in range(j + 1, 4):
                    v1 = a[j] - a[i]
                    v2 = a[k] - a[i]
                    if abs(v1[0] * v2[1] - v1[1] * v2[0]) < 1e-12:
                        raise ValueError("anchors must be in convex position")

    @property
    def x_range(self):
        a = np.asarray(self.anchors)
        return float(a[:, 0].min()), float(a[:, 0].max())

    @property
    def y_range(self):
        a = np.asarray(self.anchors)
        return float(a[:, 1].min()), float(a[:, 1].max())

    @property
    def diagonal(self) -> float:
        x0, x1 = self.x_range
        y0, y1 = self.y_range
        return math.hypot(x1 - x0, y1 - y0)

    def contains_xy(self, xy) -> bool:
        x, y = float(xy[0]), float(xy[1])
        x0, x1 = self.x_range
        y0, y1 = self.y_range
        return x0 < x < x1 and y0 < y < y1


@dataclass(frozen=True)
class CableLengths:
    l: np.ndarray

    @staticmethod
    def make(lengths) -> "CableLengths":
        arr = np.asarray(lengths, dtype=float)
        if arr.shape != (4,):
            raise ValueError("need four strap lengths")
        if not np.all(arr > 0):
            raise ValueError("strap lengths must be positive")
        return CableLengths(arr)


@dataclass(frozen=True)
class FineStageLimits:
    """Fine-stage envelope: max tilt from vertical and z travel."""

    max_tilt: float = math.radians(45.0)
    z_range: float = 0.13

    def __post_init__(self):
        if not 0.0 < self.max_tilt < math.pi / 2:
            raise ValueError("max_tilt must be in (0, pi/2)")
        if self.z_range <= 0:
            raise ValueError("z_range must be positive")


def _swing_twist(q):
    """Split q into swing (tilt away from z) * twist (rotation about z)."""
    w, x, y, z = q
    n = math.hypot(w, z)
    if n < 1e-12:
        # pure 180-degree swing; twist is identity
        twist = np.array([1.0, 0.0, 0.0, 0.0])
    else:
        twist = np.array([w / n, 0.0, 0.0, z / n])
    swing = quat_mul(q, quat_conj(twist))
    return swing, twist


def clamp_to_workspace(p: Pose, w: Workspace | None = None,
                       f: FineStageLimits | None = None) -> Pose:
    """Project a pose into the reachable envelope.

    Position is clipped to the workspace box componentwise; if the tilt
    exceeds the fine-stage limit the swing component is shortened to land
    exactly on the limit, preserving azimuth and probe twist.  Idempotent.
    """
    w = w or Workspace()
    f = f or FineStageLimits()
    if not (np.all(np.isfinite(p.position)) and np.all(np.isfinite(p.orientation))):
        raise InvalidPoseError("non-finite pose")
    lo = w.center - w.half_extents
    hi = w.center + w.half_extents
    pos = np.clip(p.position, lo, hi)

    q = p.orientation
    tilt = p.tilt()
    if tilt > f.max_tilt + 1e-12:
        swing, twist = _swing_twist(q)
        sw, sx, sy, _ = swing
        sin_half = math.hypot(sx, sy)
        if sin_half > 1e-15:
            ax, ay = sx / sin_half, sy / sin_half
        else:  # no swing direction: fall back to x
            ax, ay = 1.0, 0.0
        half = f.max_tilt / 2.0
        swing_clamped = np.array(
            [math.cos(half), math.sin(half) * ax, math.sin(half) * ay, 0.0])
        q = _normalize_quat(quat_mul(swing_clamped, twist))
    return Pose(pos, q)


def inverse_kinematics(xy, rig: CableRig | None = None) -> CableLengths:
    """Strap lengths placing the ring center at xy (Euclidean distances)."""
    rig = rig or CableRig()
    xy = np.asarray(xy, dtype=float)
    if not rig.contains_xy(xy):
        raise OutOfRigError(f"ring position {xy.tolist()} outside anchor rectangle")
    d = np.hypot(rig.anchors[:, 0] - xy[0], rig.anchors[:, 1] - xy[1])
    return CableLengths(d)


FK_RESIDUAL_TOL = 1e-6


def forward_kinematics(lengths: CableLengths, rig: CableRig | None = None):
    """Ring position from strap lengths, least squares over all four anchors.

    Returns (xy, residual) where residual is the worst |dist - l_i|.
    Raises InconsistentLengthsError when no interior point reproduces the
    lengths within FK_RESIDUAL_TOL.
    """
    rig = rig or CableRig()
    a = rig.anchors
    l = np.asarray(lengths.l, dtype=float)

    # Linearize: |a_i - p|^2 - |a_0 - p|^2 gives linear equations in p.
    # Exact for consistent lengths, then Gauss-Newton polish for noisy ones.
    a0x, a0y = a[0]
    l0sq = l[0] * l[0]
    m00 = m01 = m11 = b0 = b1 = 0.0
    for i in range(1, 4):
        cx = 2.0 * (a[i, 0] - a0x)
        cy = 2.0 * (a[i, 1] - a0y)
        rhs = (a[i, 0] ** 2 + a[i, 1] ** 2 - a0x ** 2 - a0y ** 2
               - (l[i] * l[i] - l0sq))
        m00 += cx * cx
        m01 += cx * cy
        m11 += cy * cy
        b0 += cx * rhs
        b1 += cy * rhs
    det = m00 * m11 - m01 * m01
    if abs(det) < 1e-18:
        raise InconsistentLengthsError("degenerate anchor geometry")
    x = (m11 * b0 - m01 * b1) / det
    y = (m00 * b1 - m01 * b0) / det

    def residuals(px, py):
        return [math.hypot(a[i, 0] - px, a[i, 1] - py) - l[i] for i in range(4)]

    # Gauss-Newton refinement (no-op when the linear solve is already exact)
    for _ in range(8):
        r = residuals(x, y)
        if max(abs(v) for v in r) < 1e-12:
            break
        j00 = j01 = j11 = g0 = g1 = 0.0
        for i in range(4):
            dist = math.hypot(a[i, 0] - x, a[i, 1] - y)
            if dist < 1e-12:
                continue
            jx = (x - a[i, 0]) / dist
            jy = (y - a[i, 1]) / dist
            j00 += jx * jx
            j01 += jx * jy
            j11 += jy * jy
            g0 += jx * r[i]
            g1 += jy * r[i]
        det = j00 * j11 - j01 * j01
        if abs(det) < 1e-18:
            break
        x -= (j11 * g0 - j01 * g1) / det
        y -= (j00 * g1 - j01 * g0) / det

    worst = max(abs(v) for v in residuals(x, y))
    if worst > FK_RESIDUAL_TOL or not rig.contains_xy((x, y)):
        raise InconsistentLengthsError(
            f"strap lengths inconsistent (residual {worst:.3e} m)")
    return np.array([x, y]), worst


def step_toward(current: Pose, target: Pose, dt: float,
                v_max: float, w_max: float,
                workspace: Workspace | None = None,
                limits: FineStageLimits | None = None) -> Pose:
    """Rate-limited step of the slave toward a commanded pose.

    Position travels the straight line by at most v_max*dt; orientation
    slerps by at most w_max*dt; the result is re-clamped to the workspace.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    delta = target.position - current.position
    dist = float(np.linalg.norm(delta))
    step = v_max * dt
    if dist <= step or dist == 0.0:
        pos = target.position.copy()
    else:
        pos = current.position + delta * (step / dist)

    ang = quat_angle(current.orientation, target.orientation)
    max_ang = w_max * dt
    if ang <= max_ang or ang == 0.0:
        q = target.orientation.copy()
    else:
        q = quat_slerp(current.orientation, target.orientation, max_ang / ang)
    return clamp_to_workspace(Pose(pos, _normalize_quat(np.asarray(q))),
                              workspace, limits)
