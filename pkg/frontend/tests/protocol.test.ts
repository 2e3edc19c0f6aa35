import { readFileSync } from "node:fs";
import { describe, expect, it } from "vitest";

import {
    ControlOp, CorruptError, MsgType, NotAMessageError, ProtocolError,
    TruncatedError, UnsupportedError, crc32, decode, encode, filterStale,
    type Message,
} from "../src/protocol";

interface WireVector {
    name: string;
    msg_type: number;
    seq: number;
    timestamp_us: number;
    fields: Record<string, unknown>;
    hex: string;
}

const vectors: WireVector[] = JSON.parse(
    readFileSync(new URL("./fixtures/wire_vectors.json", import.meta.url), "utf8"));

function fromHex(hex: string): Uint8Array {
    const out = new Uint8Array(hex.length / 2);
    for (let i = 0; i < out.length; i++) {
        out[i] = parseInt(hex.slice(2 * i, 2 * i + 2), 16);
    }
    return out;
}

function toHex(buf: Uint8Array): string {
    return Array.from(buf, (b) => b.toString(16).padStart(2, "0")).join("");
}

function messageFromVector(v: WireVector): Message {
    const f = v.fields;
    switch (v.msg_type) {
        case MsgType.PoseCommand:
            return { type: MsgType.PoseCommand,
                     position: f.position as [number, number, number],
                     quaternion: f.quaternion as [number, number, number, number] };
        case MsgType.ForceSample:
            return { type: MsgType.ForceSample,
                     force: f.force as [number, number, number] };
        case MsgType.UsFrame:
            return { type: MsgType.UsFrame,
                     width: f.width as number, height: f.height as number,
                     pixelFormat: f.pixel_format as number,
                     frameId: f.frame_id as number,
                     pixelSpacingUm: f.pixel_spacing_um as number,
                     frozen: f.frozen as boolean,
                     pixels: fromHex(f.pixels_hex as string) };
        case MsgType.Heartbeat:
            return { type: MsgType.Heartbeat };
        case MsgType.SessionControl:
            return { type: MsgType.SessionControl, op: f.op as ControlOp };
        case MsgType.StatusReport:
            return { type: MsgType.StatusReport,
                     rxBytesPerS: BigInt(f.rx_bytes_per_s as number),
                     txBytesPerS: BigInt(f.tx_bytes_per_s as number),
                     rttEstimateUs: BigInt(f.rtt_estimate_us as number) };
        default:
            throw new Error(`unknown vector type ${v.msg_type}`);
    }
}

// small deterministic PRNG for the fuzz cases
function mulberry32(seed: number): () => number {
    let a = seed >>> 0;
    return () => {
        a = (a + 0x6d2b79f5) >>> 0;
        let t = Math.imul(a ^ (a >>> 15), 1 | a);
        t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
        return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
    };
}

describe("frozen backend byte vectors", () => {
    it("encodes every vector to the exact backend bytes", () => {
        for (const v of vectors) {
            const data = encode(messageFromVector(v), v.seq, v.timestamp_us);
            expect(toHex(data), v.name).toBe(v.hex);
        }
    });

    it("decodes every vector back to its fields", () => {
        for (const v of vectors) {
            const { msg, header } = decode(fromHex(v.hex));
            expect(header.msgType, v.name).toBe(v.msg_type);
            expect(header.seq, v.name).toBe(v.seq);
            expect(header.timestampUs, v.name).toBe(BigInt(v.timestamp_us));
            expect(msg, v.name).toEqual(messageFromVector(v));
        }
    });

    it("pins the 24-byte heartbeat prefix", () => {
        const v = vectors.find((x) => x.name === "heartbeat_pinned")!;
        const data = fromHex(v.hex);
        expect(data.length).toBe(24);
        expect(Array.from(data.subarray(0, 8)))
            .toEqual([0x54, 0x52, 0x01, 0x04, 0, 0, 0, 0]);
    });
});

describe("roundtrip", () => {
    it("survives encode/decode for random pose commands", () => {
        const rand = mulberry32(1);
        for (let i = 0; i < 500; i++) {
            const q = [rand() - 0.5, rand() - 0.5, rand() - 0.5, rand() - 0.5];
            const n = Math.hypot(...q);
            const msg: Message = {
                type: MsgType.PoseCommand,
                position: [rand() * 0.16 - 0.08, rand() * 0.13 - 0.065,
                           rand() * 0.13 - 0.065],
                quaternion: q.map((c) => c / n) as [number, number, number, number],
            };
            const { msg: back } = decode(encode(msg, i, i * 10_000));
            if (back.type !== MsgType.PoseCommand) throw new Error("wrong type");
            for (let k = 0; k < 3; k++) {
                expect(back.position[k]).toBe(msg.position[k]);
            }
            for (let k = 0; k < 4; k++) {
                expect(back.quaternion[k]).toBeCloseTo(msg.quaternion[k], 12);
            }
        }
    });
});

describe("decode error taxonomy", () => {
    const heartbeat = encode({ type: MsgType.Heartbeat }, 0, 0);

    it("rejects bad magic as NotAMessage", () => {
        const bad = heartbeat.slice();
        bad[0] = 0x00;
        expect(() => decode(bad)).toThrow(NotAMessageError);
    });

    it("rejects every truncation as Truncated", () => {
        for (let n = 2; n < heartbeat.length; n++) {
            expect(() => decode(heartbeat.subarray(0, n))).toThrow(TruncatedError);
        }
    });

    it("rejects trailing bytes as Corrupt", () => {
        const padded = new Uint8Array(heartbeat.length + 1);
        padded.set(heartbeat);
        expect(() => decode(padded)).toThrow(CorruptError);
    });

    it("rejects unknown version and type as Unsupported", () => {
        const v9 = heartbeat.slice();
        v9[2] = 9;
        expect(() => decode(v9)).toThrow(UnsupportedError);
        const t99 = heartbeat.slice();
        t99[3] = 99;
        // CRC still covers the header, so recompute it for this case
        const view = new DataView(t99.buffer);
        view.setUint32(t99.length - 4, crc32(t99.subarray(0, t99.length - 4)), true);
        expect(() => decode(t99)).toThrow(UnsupportedError);
    });

    it("rejects every single bit flip via the CRC", () => {
        const pose = encode({
            type: MsgType.PoseCommand,
            position: [0.01, -0.02, -0.003],
            quaternion: [1, 0, 0, 0],
        }, 5, 123_456);
        const rand = mulberry32(2);
        for (let trial = 0; trial < 500; trial++) {
            const bad = pose.slice();
            const bit = Math.floor(rand() * pose.length * 8);
            bad[bit >> 3] ^= 1 << (bit & 7);
            expect(() => decode(bad)).toThrow(ProtocolError);
        }
    });

    it("rejects off-unit quaternions and non-finite values as Corrupt", () => {
        const offUnit = encode({
            type: MsgType.PoseCommand,
            position: [0, 0, 0],
            quaternion: [1, 0, 0, 0],
        }, 0, 0);
        const view = new DataView(offUnit.buffer);
        view.setFloat64(20 + 24, 1.5, true);    // quaternion w
        view.setUint32(offUnit.length - 4,
                       crc32(offUnit.subarray(0, offUnit.length - 4)), true);
        expect(() => decode(offUnit)).toThrow(CorruptError);

        const nan = encode({
            type: MsgType.ForceSample, force: [0, 0, 0],
        }, 0, 0);
        const nview = new DataView(nan.buffer);
        nview.setFloat64(20, NaN, true);
        nview.setUint32(nan.length - 4,
                        crc32(nan.subarray(0, nan.length - 4)), true);
        expect(() => decode(nan)).toThrow(CorruptError);
    });

    it("never throws anything but ProtocolError on random bytes", () => {
        const rand = mulberry32(3);
        for (let trial = 0; trial < 2000; trial++) {
            const n = Math.floor(rand() * 64);
            const junk = new Uint8Array(n);
            for (let i = 0; i < n; i++) junk[i] = Math.floor(rand() * 256);
            try {
                decode(junk);
            } catch (err) {
                expect(err).toBeInstanceOf(ProtocolError);
            }
        }
    });
});

describe("stale filtering", () => {
    it("drops stale pose/force/frame, passes control and heartbeats", () => {
        const seen = new Map<number, number>();
        expect(filterStale(seen, MsgType.PoseCommand, 5)).toBe(true);
        expect(filterStale(seen, MsgType.PoseCommand, 5)).toBe(false);
        expect(filterStale(seen, MsgType.PoseCommand, 4)).toBe(false);
        expect(filterStale(seen, MsgType.PoseCommand, 6)).toBe(true);
        expect(filterStale(seen, MsgType.ForceSample, 1)).toBe(true);
        expect(filterStale(seen, MsgType.Heartbeat, 0)).toBe(true);
        expect(filterStale(seen, MsgType.Heartbeat, 0)).toBe(true);
        expect(filterStale(seen, MsgType.SessionControl, 0)).toBe(true);
    });
});
