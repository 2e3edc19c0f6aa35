"""Regenerate the frontend test fixtures from the backend encoder.

Freezes two JSON files under tests/fixtures/:

  wire_vectors.json    single encoded messages with their field values
  session_stream.json  the byte stream a live slave produces for a short
                       scripted exam, plus the caliper cross-check values

Run from the repository root with the backend installed:

    python3 frontend/tools/make_fixtures.py
"""

import json
from pathlib import Path

from tersim import protocol as proto
from tersim.phantom import PRESETS, ground_truth, measure_ap_from_frame, caliper_measure
from tersim.session import SessionConfig, SlaveEndpoint

FIXTURES = Path(__file__).resolve().parent.parent / "tests" / "fixtures"


def wire_vectors() -> list:
    pixels = bytes(range(12))
    cases = [
        ("heartbeat_pinned", proto.Heartbeat(), 0, 0, {}),
        ("heartbeat", proto.Heartbeat(), 1234, 5_000_000, {}),
        ("pose_identity", proto.PoseCommand((0.0, 0.0, 0.0), (1.0, 0.0, 0.0, 0.0)),
         7, 1_000_000, {"position": [0.0, 0.0, 0.0], "quaternion": [1.0, 0.0, 0.0, 0.0]}),
        ("pose_box_corner",
         proto.PoseCommand((0.08, -0.065, 0.065), (1.0, 0.0, 0.0, 0.0)),
         8, 1_010_000,
         {"position": [0.08, -0.065, 0.065], "quaternion": [1.0, 0.0, 0.0, 0.0]}),
        ("pose_tilted",
         proto.PoseCommand((0.01, -0.02, -0.003),
                           (0.9238795325112867, 0.3826834323650898, 0.0, 0.0)),
         9, 1_020_000,
         {"position": [0.01, -0.02, -0.003],
          "quaternion": [0.9238795325112867, 0.3826834323650898, 0.0, 0.0]}),
        ("force_zero", proto.ForceSample((0.0, 0.0, 0.0)), 2, 20_000,
         {"force": [0.0, 0.0, 0.0]}),
        ("force_half_cap", proto.ForceSample((0.0, 0.0, 3.2)), 3, 30_000,
         {"force": [0.0, 0.0, 3.2]}),
        ("force_over_cap", proto.ForceSample((1.5, -2.0, 9.25)), 4, 40_000,
         {"force": [1.5, -2.0, 9.25]}),
        ("us_frame_small",
         proto.UsFrameMsg(4, 3, 0, 42, 500, False, pixels), 11, 2_000_000,
         {"width": 4, "height": 3, "pixel_format": 0, "frame_id": 42,
          "pixel_spacing_um": 500, "frozen": False, "pixels_hex": pixels.hex()}),
        ("us_frame_frozen",
         proto.UsFrameMsg(2, 2, 0, 43, 500, True, b"\x05\x80\xc8\xff"),
         12, 2_050_000,
         {"width": 2, "height": 2, "pixel_format": 0, "frame_id": 43,
          "pixel_spacing_um": 500, "frozen": True, "pixels_hex": "0580c8ff"}),
        ("control_hello", proto.SessionControl(proto.ControlOp.HELLO), 0, 0,
         {"op": 0}),
        ("control_freeze", proto.SessionControl(proto.ControlOp.FREEZE), 5, 500_000,
         {"op": 3}),
        ("control_bye", proto.SessionControl(proto.ControlOp.BYE), 6, 600_000,
         {"op": 5}),
        ("status_report", proto.StatusReport(1_500_000, 2 ** 40, 300_123), 20,
         10_000_000,
         {"rx_bytes_per_s": 1_500_000, "tx_bytes_per_s": 2 ** 40,
          "rtt_estimate_us": 300_123}),
    ]
    return [
        {"name": name, "msg_type": int(msg.msg_type), "seq": seq,
         "timestamp_us": ts, "fields": fields,
         "hex": proto.encode(msg, seq, ts).hex()}
        for name, msg, seq, ts, fields in cases
    ]


def session_stream() -> dict:
    phantom = PRESETS["aaa_54mm"]
    cfg = SessionConfig()
    slave = SlaveEndpoint(phantom, cfg)
    gt = ground_truth(phantom)
    target = (0.0, gt.max_ap_y, -0.003)

    seq = 0

    def send(msg, now):
        nonlocal seq
        data = proto.encode(msg, seq, int(round(now * 1e6)))
        seq += 1
        return data

    events = []
    tick = cfg.tick
    for k in range(301):                    # 3.0 simulated seconds
        t = round(k * tick, 6)
        payloads = []
        if k == 0:
            payloads.append(send(proto.SessionControl(proto.ControlOp.HELLO), t))
        else:
            payloads.append(send(proto.PoseCommand(
                target, (1.0, 0.0, 0.0, 0.0)), t))
            if k % 10 == 0:
                payloads.append(send(proto.Heartbeat(), t))
            if k == 150:
                payloads.append(send(
                    proto.SessionControl(proto.ControlOp.FREEZE), t))
        for data in slave.tick(payloads, t):
            events.append({"t": t, "hex": data.hex()})

    frozen = slave.frozen_frame
    assert frozen is not None and frozen.frozen
    ap_m, (a, b) = measure_ap_from_frame(frozen)
    return {
        "tick": tick,
        "duration": 3.0,
        "events": events,
        "expected": {
            "frozen_frame_id": frozen.frame_id,
            "caliper_a": [int(a[0]), int(a[1])],
            "caliper_b": [int(b[0]), int(b[1])],
            "caliper_m": caliper_measure(frozen, a, b),
            "ap_truth_m": gt.max_ap_diameter,
            "ap_measured_m": ap_m,
            "pixel_spacing_um": int(round(frozen.pixel_spacing * 1e6)),
        },
    }


def main() -> None:
    FIXTURES.mkdir(parents=True, exist_ok=True)
    (FIXTURES / "wire_vectors.json").write_text(
        json.dumps(wire_vectors(), indent=1) + "\n")
    (FIXTURES / "session_stream.json").write_text(
        json.dumps(session_stream()) + "\n")
    print(f"wrote fixtures to {FIXTURES}")


if __name__ == "__main__":
    main()
