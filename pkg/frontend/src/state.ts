/**
 * Console state store: one plain object mutated only from the UI event
 * loop and the socket callback, driving every panel of the master screen.
 *
 * Steering maps mouse input to probe motion (1 px = 0.5 mm), clamps the
 * pose client-side with the robot's own workspace constants, and emits
 * pose commands at no more than 100 Hz while the link is up.  The force
 * readout saturates at the 6.4 N device limit no matter what arrives.
 */

import {
    ControlOp, DEGRADED_AFTER, SAFESTOP_AFTER,
    MsgType, ProtocolError, decode, encode, filterStale,
    type Message, type Quat, type UsFrameMsg, type Vec3,
} from "./protocol";
import {
    IDENTITY_QUAT, clampPose, quatFromAxisAngle, quatMul, quatNormalize,
    type Pose,
} from "./kinematics";

export const FORCE_CAP_N = 6.4;
export const PX_TO_M = 0.0005;              // drag mapping: 1 px = 0.5 mm
export const WHEEL_TO_M = 0.001;            // one wheel step = 1 mm of z
export const TILT_PER_PX = 0.005;           // radians per dragged pixel
export const COMMAND_MIN_INTERVAL = 0.01;   // 100 Hz command rate ceiling

export type LinkBadge = "Idle" | "HelloSent" | "Active" | "Degraded" | "SafeStop" | "Closed";

export interface CaliperPoint {
    x: number;      // pixel column
    y: number;      // pixel row
}

export class ConsoleState {
    probe: Pose = { position: [0, 0, 0], quaternion: [...IDENTITY_QUAT] as Quat };
    latestFrame: UsFrameMsg | null = null;
    force: Vec3 = [0, 0, 0];
    link: LinkBadge = "Idle";
    frozen = false;
    caliper: CaliperPoint[] = [];
    rxBytesPerS = 0;
    txBytesPerS = 0;
    note: string | null = null;     // transient banner / tooltip text
    framesReceived = 0;
    decodeErrors = 0;

    private lastHeartbeatRx = 0;
    private seqSeen = new Map<number, number>();
    private txSeq = 0;
    private lastCommandTx = -Infinity;
    private poseDirty = false;

    private send(msg: Message, now: number): Uint8Array {
        return encode(msg, this.txSeq++, Math.round(now * 1e6));
    }

    /** Begin (or re-begin) the handshake; returns the hello datagram. */
    hello(now: number): Uint8Array {
        this.link = "HelloSent";
        return this.send({ type: MsgType.SessionControl, op: ControlOp.Hello }, now);
    }

    /** Feed one received datagram; corrupt data is counted and dropped. */
    handleDatagram(data: Uint8Array, now: number): void {
        let msg: Message;
        let seq: number;
        try {
            const res = decode(data);
            msg = res.msg;
            seq = res.header.seq;
        } catch (err) {
            if (err instanceof ProtocolError) {
                this.decodeErrors++;
                return;
            }
            throw err;
        }
        if (!filterStale(this.seqSeen, msg.type, seq)) return;

        switch (msg.type) {
            case MsgType.ForceSample:
                this.force = msg.force;
                break;
            case MsgType.UsFrame:
                this.latestFrame = msg;
                if (msg.frozen !== this.frozen) this.caliper = [];
                this.frozen = msg.frozen;
                this.framesReceived++;
                break;
            case MsgType.Heartbeat:
                this.heartbeatSeen(now);
                break;
            case MsgType.SessionControl:
                if (msg.op === ControlOp.Hello) {
                    if (this.link === "HelloSent") {
                        this.link = "Active";
                        this.lastHeartbeatRx = now;
                        this.note = null;
                    } else {
                        this.heartbeatSeen(now);
                    }
                } else if (msg.op === ControlOp.Bye) {
                    this.link = "Closed";
                }
                break;
            case MsgType.StatusReport:
                this.rxBytesPerS = Number(msg.rxBytesPerS);
                this.txBytesPerS = Number(msg.txBytesPerS);
                break;
        }
    }

    private heartbeatSeen(now: number): void {
        if (this.link === "Active" || this.link === "Degraded") {
            this.link = "Active";
            this.lastHeartbeatRx = now;
        }
    }

    /** Advance the heartbeat watchdog; call at least every 10 ms. */
    tick(now: number): void {
        if (this.link !== "Active" && this.link !== "Degraded") return;
        const gap = now - this.lastHeartbeatRx;
        if (gap > SAFESTOP_AFTER) {
            this.link = "SafeStop";
            this.note = "link lost: robot in safe stop, reconnect to resume";
        } else if (gap > DEGRADED_AFTER) {
            this.link = "Degraded";
        }
    }

    get connected(): boolean {
        return this.link === "Active" || this.link === "Degraded";
    }

    /** Force magnitude shown on the bar, never above the device limit. */
    displayForceN(): number {
        return Math.min(Math.hypot(...this.force), FORCE_CAP_N);
    }

    forceBarFraction(): number {
        return this.displayForceN() / FORCE_CAP_N;
    }

    // -- steering ----------------------------------------------------------

    /** Plain drag: XY translation.  Screen right = +x, screen up = +y. */
    drag(dxPx: number, dyPx: number): void {
        this.nudge([dxPx * PX_TO_M, -dyPx * PX_TO_M, 0]);
    }

    /** Wheel: probe depth.  Positive steps press in (-z). */
    wheel(steps: number): void {
        this.nudge([0, 0, -steps * WHEEL_TO_M]);
    }

    /** Modifier-drag: tilt about the in-plane axes. */
    tiltDrag(dxPx: number, dyPx: number): void {
        const dq = quatMul(
            quatFromAxisAngle([0, 1, 0], dxPx * TILT_PER_PX),
            quatFromAxisAngle([1, 0, 0], -dyPx * TILT_PER_PX));
        this.probe = clampPose({
            position: this.probe.position,
            quaternion: quatNormalize(quatMul(dq, this.probe.quaternion)),
        });
        this.poseDirty = true;
    }

    private nudge(delta: Vec3): void {
        this.probe = clampPose({
            position: this.probe.position.map((v, i) => v + delta[i]) as Vec3,
            quaternion: this.probe.quaternion,
        });
        this.poseDirty = true;
    }

    /**
     * Emit the pending pose command, if the link is up and the 100 Hz
     * ceiling allows.  Inputs made while disconnected stay buffered in
     * the local pose and go out after the next handshake.
     */
    emitPose(now: number): Uint8Array | null {
        if (!this.poseDirty) return null;
        if (!this.connected) {
            this.note = "not connected: steering buffered locally";
            return null;
        }
        if (now - this.lastCommandTx < COMMAND_MIN_INTERVAL - 1e-12) return null;
        this.lastCommandTx = now;
        this.poseDirty = false;
        return this.send({
            type: MsgType.PoseCommand,
            position: [...this.probe.position] as Vec3,
            quaternion: [...this.probe.quaternion] as Quat,
        }, now);
    }

    // -- freeze and calipers -----------------------------------------------

    freeze(now: number): Uint8Array | null {
        if (!this.connected) return null;
        return this.send({ type: MsgType.SessionControl, op: ControlOp.Freeze }, now);
    }

    unfreeze(now: number): Uint8Array | null {
        this.caliper = [];
        if (!this.connected) return null;
        return this.send({ type: MsgType.SessionControl, op: ControlOp.Unfreeze }, now);
    }

    /**
     * Register a caliper click at a pixel coordinate of the displayed
     * frame.  Returns the readout in millimeters once two points are
     * placed, null otherwise.  Clicks on a live image only show a hint.
     */
    caliperClick(x: number, y: number): number | null {
        const f = this.latestFrame;
        if (!f || !f.frozen) {
            this.note = "freeze the image before measuring";
            return null;
        }
        if (x < 0 || x >= f.width || y < 0 || y >= f.height) return null;
        if (this.caliper.length >= 2) this.caliper = [];
        this.caliper.push({ x, y });
        return this.caliperReadoutMm();
    }

    /** Distance between the two caliper points in millimeters, if set. */
    caliperReadoutMm(): number | null {
        if (this.caliper.length !== 2 || !this.latestFrame) return null;
        const [a, b] = this.caliper;
        const px = Math.hypot(a.x - b.x, a.y - b.y);
        return px * this.latestFrame.pixelSpacingUm * 1e-6 * 1000;
    }
}
