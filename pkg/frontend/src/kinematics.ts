/**
 * Client-side pose clamping with the same workspace constants as the
 * robot side, so every command leaving the console is already reachable.
 *
 * Exam frame: x lateral, y craniocaudal, z out of the body; identity
 * orientation points the probe straight down (-z).
 */

import type { Quat, Vec3 } from "./protocol";

export const WORKSPACE_HALF_EXTENTS: Vec3 = [0.08, 0.065, 0.065];
export const MAX_TILT = (45 * Math.PI) / 180;

export const IDENTITY_QUAT: Quat = [1, 0, 0, 0];

export function quatMul(a: Quat, b: Quat): Quat {
    const [aw, ax, ay, az] = a;
    const [bw, bx, by, bz] = b;
    return [
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ];
}

export function quatConj(q: Quat): Quat {
    return [q[0], -q[1], -q[2], -q[3]];
}

export function quatNormalize(q: Quat): Quat {
    const n = Math.hypot(...q);
    if (n < 1e-12) throw new Error("zero quaternion");
    return q.map((c) => c / n) as Quat;
}

export function quatRotate(q: Quat, v: Vec3): Vec3 {
    const [, x, y, z] = quatMul(quatMul(q, [0, ...v]), quatConj(q));
    return [x, y, z];
}

/** Quaternion rotating by angle about a (unit) axis. */
export function quatFromAxisAngle(axis: Vec3, angle: number): Quat {
    const s = Math.sin(angle / 2);
    return [Math.cos(angle / 2), s * axis[0], s * axis[1], s * axis[2]];
}

export interface Pose {
    position: Vec3;
    quaternion: Quat;
}

/** Direction the probe points: -z (into the body) at identity. */
export function probeAxis(q: Quat): Vec3 {
    return quatRotate(q, [0, 0, -1]);
}

/** Angle between probe axis and straight-down, radians. */
export function tilt(q: Quat): number {
    const c = -probeAxis(q)[2];
    return Math.acos(Math.max(-1, Math.min(1, c)));
}

function swingTwist(q: Quat): { swing: Quat; twist: Quat } {
    const [w, , , z] = q;
    const n = Math.hypot(w, z);
    // n ~ 0 is a pure 180-degree swing; twist falls back to identity
    const twist: Quat = n < 1e-12 ? [1, 0, 0, 0] : [w / n, 0, 0, z / n];
    return { swing: quatMul(q, quatConj(twist)), twist };
}

/**
 * Project a pose into the reachable envelope: position clipped to the
 * workspace box, tilt shortened onto the 45-degree limit preserving
 * azimuth and probe twist.  Idempotent.
 */
export function clampPose(p: Pose): Pose {
    const position = p.position.map((v, i) => {
        const h = WORKSPACE_HALF_EXTENTS[i];
        return Math.max(-h, Math.min(h, v));
    }) as Vec3;

    let q = quatNormalize(p.quaternion);
    if (tilt(q) > MAX_TILT + 1e-12) {
        const { swing, twist } = swingTwist(q);
        const [, sx, sy] = swing;
        const sinHalf = Math.hypot(sx, sy);
        const ax = sinHalf > 1e-15 ? sx / sinHalf : 1;
        const ay = sinHalf > 1e-15 ? sy / sinHalf : 0;
        const half = MAX_TILT / 2;
        const clamped: Quat = [Math.cos(half), Math.sin(half) * ax, Math.sin(half) * ay, 0];
        q = quatNormalize(quatMul(clamped, twist));
    }
    return { position, quaternion: q };
}
