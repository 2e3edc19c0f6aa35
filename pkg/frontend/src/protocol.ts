/**
 * Binary wire codec for the master/slave link, mirroring PROTOCOL.md.
 *
 * Frame: "TR" magic, version, msg_type, u32 seq, u64 timestamp_us,
 * u32 payload_len, payload, CRC32 (IEEE) over header+payload.
 * All multi-byte fields little-endian.
 */

export const MAGIC0 = 0x54;     // "T"
export const MAGIC1 = 0x52;     // "R"
export const VERSION = 1;
export const HEADER_SIZE = 20;
export const MAX_PAYLOAD = 16 * 1024 * 1024;

export const HEARTBEAT_PERIOD = 0.1;    // seconds
export const DEGRADED_AFTER = 0.25;
export const SAFESTOP_AFTER = 1.0;

const QUAT_DECODE_TOL = 1e-6;

export enum MsgType {
    PoseCommand = 1,
    ForceSample = 2,
    UsFrame = 3,
    Heartbeat = 4,
    SessionControl = 5,
    StatusReport = 6,
}

export enum ControlOp {
    Hello = 0,
    Start = 1,
    Stop = 2,
    Freeze = 3,
    Unfreeze = 4,
    Bye = 5,
}

export type Vec3 = [number, number, number];
export type Quat = [number, number, number, number];    // scalar-first

export interface PoseCommand {
    type: MsgType.PoseCommand;
    position: Vec3;
    quaternion: Quat;
}

export interface ForceSample {
    type: MsgType.ForceSample;
    force: Vec3;
}

export interface UsFrameMsg {
    type: MsgType.UsFrame;
    width: number;
    height: number;
    pixelFormat: number;        // 0 = gray8
    frameId: number;
    pixelSpacingUm: number;
    frozen: boolean;
    pixels: Uint8Array;
}

export interface Heartbeat {
    type: MsgType.Heartbeat;
}

export interface SessionControl {
    type: MsgType.SessionControl;
    op: ControlOp;
}

export interface StatusReport {
    type: MsgType.StatusReport;
    rxBytesPerS: bigint;
    txBytesPerS: bigint;
    rttEstimateUs: bigint;
}

export type Message =
    | PoseCommand
    | ForceSample
    | UsFrameMsg
    | Heartbeat
    | SessionControl
    | StatusReport;

export interface HeaderInfo {
    msgType: number;
    seq: number;
    timestampUs: bigint;
    payloadLen: number;
}

export class ProtocolError extends Error {}
export class OversizeError extends ProtocolError {}
export class NotAMessageError extends ProtocolError {}
export class TruncatedError extends ProtocolError {}
export class UnsupportedError extends ProtocolError {}
export class CorruptError extends ProtocolError {}

// IEEE CRC-32 (same polynomial and reflection as zlib.crc32)
const CRC_TABLE = (() => {
    const table = new Uint32Array(256);
    for (let n = 0; n < 256; n++) {
        let c = n;
        for (let k = 0; k < 8; k++) {
            c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
        }
        table[n] = c >>> 0;
    }
    return table;
})();

export function crc32(data: Uint8Array): number {
    let c = 0xffffffff;
    for (let i = 0; i < data.length; i++) {
        c = CRC_TABLE[(c ^ data[i]) & 0xff] ^ (c >>> 8);
    }
    return (c ^ 0xffffffff) >>> 0;
}

function payloadSize(m: Message): number {
    switch (m.type) {
        case MsgType.PoseCommand: return 7 * 8;
        case MsgType.ForceSample: return 3 * 8;
        case MsgType.UsFrame: return 14 + m.pixels.length;
        case MsgType.Heartbeat: return 0;
        case MsgType.SessionControl: return 1;
        case MsgType.StatusReport: return 3 * 8;
    }
}

function writePayload(m: Message, view: DataView, off: number, buf: Uint8Array): void {
    switch (m.type) {
        case MsgType.PoseCommand:
            for (let i = 0; i < 3; i++) view.setFloat64(off + 8 * i, m.position[i], true);
            for (let i = 0; i < 4; i++) view.setFloat64(off + 24 + 8 * i, m.quaternion[i], true);
            break;
        case MsgType.ForceSample:
            for (let i = 0; i < 3; i++) view.setFloat64(off + 8 * i, m.force[i], true);
            break;
        case MsgType.UsFrame:
            view.setUint16(off, m.width, true);
            view.setUint16(off + 2, m.height, true);
            view.setUint8(off + 4, m.pixelFormat);
            view.setUint32(off + 5, m.frameId, true);
            view.setUint32(off + 9, m.pixelSpacingUm, true);
            view.setUint8(off + 13, m.frozen ? 1 : 0);
            buf.set(m.pixels, off + 14);
            break;
        case MsgType.Heartbeat:
            break;
        case MsgType.SessionControl:
            view.setUint8(off, m.op);
            break;
        case MsgType.StatusReport:
            view.setBigUint64(off, m.rxBytesPerS, true);
            view.setBigUint64(off + 8, m.txBytesPerS, true);
            view.setBigUint64(off + 16, m.rttEstimateUs, true);
            break;
    }
}

/** Serialize one message; total size = 20-byte header + payload + CRC32. */
export function encode(m: Message, seq: number, timestampUs: number | bigint): Uint8Array {
    const plen = payloadSize(m);
    if (plen > MAX_PAYLOAD) {
        throw new OversizeError(`payload ${plen} bytes exceeds 16 MiB`);
    }
    const buf = new Uint8Array(HEADER_SIZE + plen + 4);
    const view = new DataView(buf.buffer);
    view.setUint8(0, MAGIC0);
    view.setUint8(1, MAGIC1);
    view.setUint8(2, VERSION);
    view.setUint8(3, m.type);
    view.setUint32(4, seq >>> 0, true);
    view.setBigUint64(8, BigInt(timestampUs) & 0xffffffffffffffffn, true);
    view.setUint32(16, plen, true);
    writePayload(m, view, HEADER_SIZE, buf);
    view.setUint32(HEADER_SIZE + plen, crc32(buf.subarray(0, HEADER_SIZE + plen)), true);
    return buf;
}

function readPayload(msgType: number, view: DataView, off: number, plen: number,
                     buf: Uint8Array): Message {
    switch (msgType) {
        case MsgType.PoseCommand: {
            if (plen !== 56) throw new CorruptError("bad PoseCommand payload length");
            const vals: number[] = [];
            for (let i = 0; i < 7; i++) vals.push(view.getFloat64(off + 8 * i, true));
            if (!vals.every(Number.isFinite)) throw new CorruptError("non-finite pose");
            const quat = vals.slice(3) as Quat;
            const norm = Math.hypot(...quat);
            if (Math.abs(norm - 1.0) > QUAT_DECODE_TOL) {
                throw new CorruptError(`quaternion norm ${norm} too far from 1`);
            }
            return {
                type: MsgType.PoseCommand,
                position: vals.slice(0, 3) as Vec3,
                quaternion: quat.map((c) => c / norm) as Quat,
            };
        }
        case MsgType.ForceSample: {
            if (plen !== 24) throw new CorruptError("bad ForceSample payload length");
            const force: number[] = [];
            for (let i = 0; i < 3; i++) force.push(view.getFloat64(off + 8 * i, true));
            if (!force.every(Number.isFinite)) throw new CorruptError("non-finite force");
            return { type: MsgType.ForceSample, force: force as Vec3 };
        }
        case MsgType.UsFrame: {
            if (plen < 14) throw new CorruptError("UsFrame payload shorter than its header");
            const width = view.getUint16(off, true);
            const height = view.getUint16(off + 2, true);
            const pixelFormat = view.getUint8(off + 4);
            const frameId = view.getUint32(off + 5, true);
            const pixelSpacingUm = view.getUint32(off + 9, true);
            const frozen = view.getUint8(off + 13);
            if (pixelFormat !== 0) {
                throw new UnsupportedError(`unknown pixel format ${pixelFormat}`);
            }
            const pixels = buf.slice(off + 14, off + plen);
            if (pixels.length !== width * height) {
                throw new CorruptError(
                    `expected ${width * height} gray8 pixels, got ${pixels.length}`);
            }
            if (frozen !== 0 && frozen !== 1) {
                throw new CorruptError("frozen flag must be 0 or 1");
            }
            return { type: MsgType.UsFrame, width, height, pixelFormat, frameId,
                     pixelSpacingUm, frozen: frozen === 1, pixels };
        }
        case MsgType.Heartbeat:
            if (plen !== 0) throw new CorruptError("Heartbeat carries no payload");
            return { type: MsgType.Heartbeat };
        case MsgType.SessionControl: {
            if (plen !== 1) throw new CorruptError("bad SessionControl payload length");
            const op = view.getUint8(off);
            if (!(op in ControlOp)) throw new CorruptError(`unknown session-control op ${op}`);
            return { type: MsgType.SessionControl, op };
        }
        case MsgType.StatusReport:
            if (plen !== 24) throw new CorruptError("bad StatusReport payload length");
            return {
                type: MsgType.StatusReport,
                rxBytesPerS: view.getBigUint64(off, true),
                txBytesPerS: view.getBigUint64(off + 8, true),
                rttEstimateUs: view.getBigUint64(off + 16, true),
            };
        default:
            throw new UnsupportedError(`unknown message type ${msgType}`);
    }
}

/**
 * Exact inverse of encode for valid input; raises NotAMessageError,
 * TruncatedError, UnsupportedError, or CorruptError otherwise.
 */
export function decode(buf: Uint8Array): { msg: Message; header: HeaderInfo } {
    if (buf.length < HEADER_SIZE) {
        if (buf.length >= 2 && (buf[0] !== MAGIC0 || buf[1] !== MAGIC1)) {
            throw new NotAMessageError("bad magic");
        }
        throw new TruncatedError(`buffer of ${buf.length} bytes shorter than header`);
    }
    const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
    if (buf[0] !== MAGIC0 || buf[1] !== MAGIC1) throw new NotAMessageError("bad magic");
    const version = view.getUint8(2);
    if (version !== VERSION) throw new UnsupportedError(`unknown version ${version}`);
    const msgType = view.getUint8(3);
    const seq = view.getUint32(4, true);
    const timestampUs = view.getBigUint64(8, true);
    const plen = view.getUint32(16, true);
    if (plen > MAX_PAYLOAD) throw new CorruptError("declared payload exceeds 16 MiB");
    const total = HEADER_SIZE + plen + 4;
    if (buf.length < total) throw new TruncatedError(`need ${total} bytes, have ${buf.length}`);
    if (buf.length > total) throw new CorruptError("trailing bytes after message");
    const stored = view.getUint32(total - 4, true);
    if (stored !== crc32(buf.subarray(0, total - 4))) {
        throw new CorruptError("CRC mismatch");
    }
    const msg = readPayload(msgType, view, HEADER_SIZE, plen, buf);
    return { msg, header: { msgType, seq, timestampUs, payloadLen: plen } };
}

const FILTERED_TYPES = new Set<number>(
    [MsgType.PoseCommand, MsgType.ForceSample, MsgType.UsFrame]);

/**
 * Per-type latest-wins freshness filter over a mutable seq map.
 * Heartbeats and session control always pass.
 */
export function filterStale(seqSeen: Map<number, number>, msgType: number,
                            seq: number): boolean {
    if (!FILTERED_TYPES.has(msgType)) return true;
    const highest = seqSeen.get(msgType);
    if (highest !== undefined && seq <= highest) return false;
    seqSeen.set(msgType, seq);
    return true;
}
