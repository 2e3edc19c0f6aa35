"""The teleoperation loop.

The master applies operator input to a virtual probe, clamps it, and sends
pose commands; the slave rate-limits its probe toward the latest command,
presses it against the phantom (linear spring contact), and streams force
samples and B-mode frames back.  Both ends run heartbeat watchdogs; the
slave halts on link SafeStop.  Everything is advanced by a lock-step
scheduler on a simulated clock, so a whole session is a pure function of
(scenario, channel params, seed).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import protocol as proto
from .kinematics import (Pose, Workspace, FineStageLimits, clamp_to_workspace,
                         step_toward, quat_slerp, quat_angle)
from .netchannel import Channel, ChannelParams
from .phantom import (PhantomConfig, UsFrame, render_frame, surface_height,
                      measure_ap_from_frame, detect_thrombus_in_frame,
                      grade_estimate, InsufficientSweepError)

FORCE_CAP = 6.4     # newtons; limit of the haptic display device


class SessionError(Exception):
    pass


class ScenarioInvalidError(SessionError):
    pass


class SessionRuntimeError(SessionError):
    pass


@dataclass(frozen=True)
class SessionConfig:
    tick: float = 0.01
    v_max: float = 0.05         # slave translation limit
    w_max: float = 0.5          # slave rotation limit
    force_cap: float = FORCE_CAP
    frame_period: float = 0.05
    operator_v: float = 0.04    # scripted operator hand speed; below v_max so
                                # the slave tracks without growing lag
    operator_w: float = 1.0
    hello_retry: float = 0.5
    control_retry_ticks: int = 20
    timeout: float = 300.0      # scenario abort horizon, simulated seconds

    def __post_init__(self):
        if self.tick <= 0:
            raise ValueError("tick must be positive")
        if self.force_cap != FORCE_CAP:
            raise ValueError("force_cap is a device constant (6.4 N)")


@dataclass
class MasterState:
    virtual_probe: Pose
    last_rendered_force: np.ndarray
    link: proto.LinkState
    frame_buffer: UsFrame | None = None
    frozen: bool = False


@dataclass
class SlaveState:
    actual_probe: Pose
    commanded_probe: Pose
    link: proto.LinkState
    contact_force: np.ndarray
    halted: bool = False


@dataclass
class MasterInput:
    """One tick of operator intent."""
    delta_position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    delta_orientation: np.ndarray | None = None     # quat applied on the left
    request_freeze: bool = False
    request_unfreeze: bool = False


def cap_force(force, cap: float = FORCE_CAP) -> np.ndarray:
    f = np.asarray(force, dtype=float)
    mag = float(np.linalg.norm(f))
    if mag > cap:
        f = f * (cap / mag)
    return f


class MasterEndpoint:
    """Master-side actor: owns its MasterState, single-owner mutation."""

    def __init__(self, cfg: SessionConfig, workspace: Workspace | None = None,
                 limits: FineStageLimits | None = None):
        self.cfg = cfg
        self.workspace = workspace or Workspace()
        self.limits = limits or FineStageLimits()
        self.state = MasterState(
            virtual_probe=Pose.identity(),
            last_rendered_force=np.zeros(3),
            link=proto.LinkState())
        self.tx_seq = 0
        self.last_heartbeat_tx = -math.inf
        self.last_hello_tx = -math.inf
        self.rx_frames = 0

    def _send(self, msg, now: float) -> bytes:
        data = proto.encode(msg, self.tx_seq, int(round(now * 1e6)))
        self.tx_seq += 1
        return data

    def receive(self, payloads, now: float) -> None:
        s = self.state
        for data in payloads:
            try:
                msg, info = proto.decode(data)
            except proto.ProtocolError:
                continue    # corrupt datagrams are dropped, not fatal
            accept, s.link = proto.filter_stale(s.link, info.msg_type, info.seq)
            if not accept:
                continue
            if isinstance(msg, proto.ForceSample):
                s.last_rendered_force = cap_force(msg.force, self.cfg.force_cap)
            elif isinstance(msg, proto.UsFrameMsg):
                img = np.frombuffer(msg.pixels, dtype=np.uint8).reshape(
                    msg.height, msg.width)
                s.frame_buffer = UsFrame(
                    width=msg.width, height=msg.height,
                    pixel_spacing=msg.pixel_spacing_um * 1e-6,
                    intensities=img, pose=s.virtual_probe,
                    frame_id=msg.frame_id, frozen=msg.frozen)
                s.frozen = msg.frozen
                self.rx_frames += 1
            elif isinstance(msg, proto.Heartbeat):
                if s.link.phase in (proto.LinkPhase.ACTIVE, proto.LinkPhase.DEGRADED):
                    s.link = proto.advance_link(s.link, proto.HeartbeatReceived(now))
            elif isinstance(msg, proto.SessionControl):
                if msg.op == proto.ControlOp.HELLO:
                    if s.link.phase == proto.LinkPhase.HELLO_SENT:
                        s.link = proto.advance_link(s.link, proto.HelloReceived(now))
                    elif s.link.phase in (proto.LinkPhase.ACTIVE,
                                          proto.LinkPhase.DEGRADED):
                        s.link = proto.advance_link(
                            s.link, proto.HeartbeatReceived(now))
                elif msg.op == proto.ControlOp.BYE:
                    s.link = proto.advance_link(s.link, proto.ByeReceived())

    def tick(self, operator_input: MasterInput, now: float) -> list[bytes]:
        s = self.state
        out: list[bytes] = []
        s.link = proto.advance_link(s.link, proto.ClockTick(now))

        # handshake management
        if s.link.phase in (proto.LinkPhase.IDLE, proto.LinkPhase.SAFE_STOP):
            s.link = proto.advance_link(s.link, proto.SendHello())
            out.append(self._send(proto.SessionControl(proto.ControlOp.HELLO), now))
            self.last_hello_tx = now
        elif (s.link.phase == proto.LinkPhase.HELLO_SENT
              and now - self.last_hello_tx >= self.cfg.hello_retry):
            out.append(self._send(proto.SessionControl(proto.ControlOp.HELLO), now))
            self.last_hello_tx = now

        # operator input always moves the local virtual probe
        pos = s.virtual_probe.position + operator_input.delta_position
        q = s.virtual_probe.orientation
        if operator_input.delta_orientation is not None:
            from .kinematics import quat_mul, _normalize_quat
            q = _normalize_quat(quat_mul(operator_input.delta_orientation, q))
        s.virtual_probe = clamp_to_workspace(
            Pose(np.asarray(pos, dtype=float), q), self.workspace, self.limits)

        if s.link.phase not in (proto.LinkPhase.ACTIVE, proto.LinkPhase.DEGRADED):
            return out      # SafeStop / handshake: commands suppressed

        # keep-alive pose command every tick
        out.append(self._send(proto.PoseCommand(
            tuple(s.virtual_probe.position), tuple(s.virtual_probe.orientation)),
            now))
        if now - self.last_heartbeat_tx >= proto.HEARTBEAT_PERIOD - 1e-9:
            out.append(self._send(proto.Heartbeat(), now))
            self.last_heartbeat_tx = now
        if operator_input.request_freeze:
            out.append(self._send(proto.SessionControl(proto.ControlOp.FREEZE), now))
        if operator_input.request_unfreeze:
            out.append(self._send(proto.SessionControl(proto.ControlOp.UNFREEZE), now))
        return out

    def send_bye(self, now: float) -> list[bytes]:
        return [self._send(proto.SessionControl(proto.ControlOp.BYE), now)]


class SlaveEndpoint:
    """Slave-side actor: robot integration, contact force, frame streaming."""

    def __init__(self, phantom_cfg: PhantomConfig, cfg: SessionConfig,
                 workspace: Workspace | None = None,
                 limits: FineStageLimits | None = None):
        self.phantom = phantom_cfg
        self.cfg = cfg
        self.workspace = workspace or Workspace()
        self.limits = limits or FineStageLimits()
        start = clamp_to_workspace(Pose.identity(), self.workspace, self.limits)
        self.state = SlaveState(
            actual_probe=start, commanded_probe=start,
            link=proto.LinkState(), contact_force=np.zeros(3))
        self.tx_seq = 0
        self.last_heartbeat_tx = -math.inf
        self.last_frame_tx = -math.inf
        self.next_frame_id = 0
        self.frozen = False
        self.frozen_frame: UsFrame | None = None
        self.frames_rendered = 0

    def _send(self, msg, now: float) -> bytes:
        data = proto.encode(msg, self.tx_seq, int(round(now * 1e6)))
        self.tx_seq += 1
        return data

    def _handshake(self, now: float, out: list[bytes]) -> None:
        s = self.state
        if s.link.phase in (proto.LinkPhase.IDLE, proto.LinkPhase.SAFE_STOP):
            s.link = proto.advance_link(s.link, proto.SendHello())
            out.append(self._send(proto.SessionControl(proto.ControlOp.HELLO), now))
            s.link = proto.advance_link(s.link, proto.HelloReceived(now))
            s.halted = False    # fresh handshake releases the safety halt
        elif s.link.phase in (proto.LinkPhase.ACTIVE, proto.LinkPhase.DEGRADED):
            # duplicate hello (lost reply or master re-handshake): re-ack
            out.append(self._send(proto.SessionControl(proto.ControlOp.HELLO), now))
            s.link = proto.advance_link(s.link, proto.HeartbeatReceived(now))

    def receive(self, payloads, now: float, out: list[bytes]) -> None:
        s = self.state
        for data in payloads:
            try:
                msg, info = proto.decode(data)
            except proto.ProtocolError:
                continue
            accept, s.link = proto.filter_stale(s.link, info.msg_type, info.seq)
            if not accept:
                continue
            if isinstance(msg, proto.PoseCommand):
                s.commanded_probe = clamp_to_workspace(
                    Pose.make(msg.position, msg.quaternion),
                    self.workspace, self.limits)
            elif isinstance(msg, proto.Heartbeat):
                if s.link.phase in (proto.LinkPhase.ACTIVE, proto.LinkPhase.DEGRADED):
                    s.link = proto.advance_link(s.link, proto.HeartbeatReceived(now))
            elif isinstance(msg, proto.SessionControl):
                if msg.op == proto.ControlOp.HELLO:
                    self._handshake(now, out)
                elif msg.op == proto.ControlOp.FREEZE:
                    self.frozen = True
                elif msg.op == proto.ControlOp.UNFREEZE:
                    self.frozen = False
                    self.frozen_frame = None
                elif msg.op == proto.ControlOp.BYE:
                    s.link = proto.advance_link(s.link, proto.ByeReceived())
                    s.halted = True

    def tick(self, payloads, now: float) -> list[bytes]:
        s = self.state
        out: list[bytes] = []
        self.receive(payloads, now, out)
        s.link = proto.advance_link(s.link, proto.ClockTick(now))
        if s.link.phase == proto.LinkPhase.SAFE_STOP:
            s.halted = True     # watchdog: link silence stops the robot

        if not s.halted:
            s.actual_probe = step_toward(
                s.actual_probe, s.commanded_probe, self.cfg.tick,
                self.cfg.v_max, self.cfg.w_max, self.workspace, self.limits)

        # linear spring contact, normal-only, reported uncapped
        z = float(s.actual_probe.position[2])
        pen = max(0.0, surface_height(self.phantom, s.actual_probe.position[:2]) - z)
        s.contact_force = np.array([0.0, 0.0, self.phantom.stiffness * pen])

        if s.link.phase not in (proto.LinkPhase.ACTIVE, proto.LinkPhase.DEGRADED):
            return out
        out.append(self._send(proto.ForceSample(tuple(s.contact_force)), now))
        if now - self.last_heartbeat_tx >= proto.HEARTBEAT_PERIOD - 1e-9:
            out.append(self._send(proto.Heartbeat(), now))
            self.last_heartbeat_tx = now

        in_contact = z <= 1e-12
        if in_contact and now - self.last_frame_tx >= self.cfg.frame_period - 1e-9:
            if self.frozen:
                if self.frozen_frame is None:
                    self.frozen_frame = render_frame(
                        self.phantom, s.actual_probe, self.next_frame_id,
                        frozen=True)
                    self.next_frame_id += 1
                    self.frames_rendered += 1
                frame = self.frozen_frame   # re-sent until unfrozen (loss cover)
            else:
                frame = render_frame(self.phantom, s.actual_probe,
                                     self.next_frame_id)
                self.next_frame_id += 1
                self.frames_rendered += 1
            out.append(self._send(proto.frame_to_msg(frame), now))
            self.last_frame_tx = now
        return out


# spec-shaped functional entry points
def master_tick(master: MasterEndpoint, operator_input: MasterInput,
                now: float) -> tuple[MasterState, list[bytes]]:
    out = master.tick(operator_input, now)
    return master.state, out


def slave_tick(slave: SlaveEndpoint, payloads, now: float
               ) -> tuple[SlaveState, list[bytes]]:
    out = slave.tick(payloads, now)
    return slave.state, out


# ---------------------------------------------------------------------------
# scripted operator (the fully scripted remote arm)


@dataclass(frozen=True)
class Station:
    xy: tuple[float, float]
    tilt: float = 0.0
    z: float = -0.003           # slight penetration keeps skin contact
    dwell_ticks: int = 80       # long enough for the slave to settle even
                                # under the satellite preset


@dataclass(frozen=True)
class MeasurementSpec:
    station_index: int
    measure: str                # ap_aorta | ap_iliac_left | ap_iliac_right


MEASURE_KINDS = ("ap_aorta", "ap_iliac_left", "ap_iliac_right")


@dataclass(frozen=True)
class Scenario:
    phantom: PhantomConfig
    sweep: tuple[Station, ...]
    measurements: tuple[MeasurementSpec, ...]
    channel: ChannelParams = ChannelParams()
    seed: int = 0
    name: str = "scenario"

    def validate(self, workspace: Workspace | None = None) -> None:
        ws = workspace or Workspace()
        if not self.sweep:
            return
        for i, st in enumerate(self.sweep):
            if not ws.contains((st.xy[0], st.xy[1], st.z)):
                raise ScenarioInvalidError(
                    f"sweep station {i} at {st.xy} outside workspace")
            if st.dwell_ticks < 1:
                raise ScenarioInvalidError(f"sweep station {i}: dwell_ticks < 1")
        for m in self.measurements:
            if not 0 <= m.station_index < len(self.sweep):
                raise ScenarioInvalidError(
                    f"measurement references missing station {m.station_index}")
            if m.measure not in MEASURE_KINDS:
                raise ScenarioInvalidError(f"unknown measurement {m.measure!r}")


def station_pose(st: Station) -> Pose:
    half = st.tilt / 2.0
    return Pose.make((st.xy[0], st.xy[1], st.z),
                     (math.cos(half), math.sin(half), 0.0, 0.0))


@dataclass
class Measurement:
    station_index: int
    measure: str
    value_m: float | None
    thrombus: bool
    frame_id: int
    time: float


class ScriptedOperator:
    """Drives the master through the scenario sweep and measurements."""

    def __init__(self, scenario: Scenario, cfg: SessionConfig):
        self.scenario = scenario
        self.cfg = cfg
        self.station_idx = 0
        self.phase = "travel" if scenario.sweep else "done"
        self.dwell_left = 0
        self.meas_queue: list[MeasurementSpec] = []
        self.measurements: list[Measurement] = []
        self.sweep_frames: list[UsFrame] = []
        self.last_frozen_id = -1
        self.retry_count = 0
        self.done = not scenario.sweep

    def _target(self) -> Pose:
        return station_pose(self.scenario.sweep[self.station_idx])

    def _advance_station(self):
        self.station_idx += 1
        if self.station_idx >= len(self.scenario.sweep):
            self.phase = "done"
            self.done = True
        else:
            self.phase = "travel"

    def input_for_tick(self, master: MasterEndpoint, now: float) -> MasterInput:
        if self.phase == "done":
            return MasterInput()
        s = master.state
        if s.link.phase not in (proto.LinkPhase.ACTIVE, proto.LinkPhase.DEGRADED):
            return MasterInput()    # wait for the link before working

        target = self._target()
        if self.phase == "travel":
            probe = s.virtual_probe
            delta = target.position - probe.position
            dist = float(np.linalg.norm(delta))
            step = self.cfg.operator_v * self.cfg.tick
            ang = quat_angle(probe.orientation, target.orientation)
            inp = MasterInput()
            if dist > step:
                inp.delta_position = delta * (step / dist)
            else:
                inp.delta_position = delta
            if ang > 1e-12:
                t = min(1.0, (self.cfg.operator_w * self.cfg.tick) / ang)
                q_next = quat_slerp(probe.orientation, target.orientation, t)
                from .kinematics import quat_mul, quat_conj, _normalize_quat
                inp.delta_orientation = _normalize_quat(
                    quat_mul(q_next, quat_conj(probe.orientation)))
            if dist <= step and ang <= self.cfg.operator_w * self.cfg.tick:
                self.phase = "dwell"
                self.dwell_left = self.scenario.sweep[self.station_idx].dwell_ticks
            return inp

        if self.phase == "dwell":
            self.dwell_left -= 1
            if self.dwell_left <= 0:
                if (s.frame_buffer is not None and not s.frame_buffer.frozen):
                    self.sweep_frames.append(s.frame_buffer)
                self.meas_queue = [m for m in self.scenario.measurements
                                   if m.station_index == self.station_idx]
                if self.meas_queue:
                    self.phase = "freeze"
                    self.retry_count = 0
                else:
                    self._advance_station()
            return MasterInput()

        if self.phase == "freeze":
            fb = s.frame_buffer
            if fb is not None and fb.frozen and fb.frame_id > self.last_frozen_id:
                for m in self.meas_queue:
                    res = measure_ap_from_frame(fb)
                    value = res[0] if res else None
                    self.measurements.append(Measurement(
                        station_index=m.station_index, measure=m.measure,
                        value_m=value,
                        thrombus=detect_thrombus_in_frame(fb),
                        frame_id=fb.frame_id, time=now))
                self.last_frozen_id = fb.frame_id
                self.phase = "unfreeze"
                self.retry_count = 0
                return MasterInput(request_unfreeze=True)
            req = self.retry_count % self.cfg.control_retry_ticks == 0
            self.retry_count += 1
            return MasterInput(request_freeze=req)

        if self.phase == "unfreeze":
            fb = s.frame_buffer
            if fb is not None and not fb.frozen and fb.frame_id > self.last_frozen_id:
                self._advance_station()
                return MasterInput()
            req = self.retry_count % self.cfg.control_retry_ticks == 0
            self.retry_count += 1
            return MasterInput(request_unfreeze=req)

        return MasterInput()


# ---------------------------------------------------------------------------
# co-simulation


@dataclass
class SessionTrace:
    events: list[dict] = field(default_factory=list)
    times: list[float] = field(default_factory=list)
    master_force_mag: list[float] = field(default_factory=list)
    slave_pos: list[tuple[float, float, float]] = field(default_factory=list)
    slave_halted: list[bool] = field(default_factory=list)
    master_phase: list[str] = field(default_factory=list)
    slave_phase: list[str] = field(default_factory=list)
    measurements: list[Measurement] = field(default_factory=list)
    sweep_frames: list = field(default_factory=list)
    duration: float = 0.0
    completed: bool = False
    channel_stats: dict = field(default_factory=dict)

    def log(self, tick: int, actor: str, event: str, **payload) -> None:
        self.events.append(
            {"tick": tick, "actor": actor, "event": event, **payload})

    def to_jsonl(self) -> str:
        return "\n".join(json.dumps(e, sort_keys=True) for e in self.events) + "\n"


def run_session(scenario: Scenario, channel_params: ChannelParams | None = None,
                seed: int | None = None, cfg: SessionConfig | None = None,
                uplink_blackout_at: float | None = None) -> SessionTrace:
    """Deterministic co-simulation of both ends and both channel directions.

    `uplink_blackout_at` silences the master-to-slave direction from that
    simulated time on (watchdog testing).
    """
    cfg = cfg or SessionConfig()
    params = channel_params if channel_params is not None else scenario.channel
    seed = scenario.seed if seed is None else seed
    scenario.validate()

    up = Channel(params, seed=(seed * 2654435761 + 1) & 0xFFFFFFFF)
    down = Channel(params, seed=(seed * 2654435761 + 2) & 0xFFFFFFFF)
    master = MasterEndpoint(cfg)
    slave = SlaveEndpoint(scenario.phantom, cfg)
    operator = ScriptedOperator(scenario, cfg)
    trace = SessionTrace()

    max_ticks = int(cfg.timeout / cfg.tick)
    grace_ticks = None
    last_master_phase = master.state.link.phase
    last_slave_phase = slave.state.link.phase
    last_halted = slave.state.halted

    for k in range(max_ticks):
        now = k * cfg.tick
        blackout = uplink_blackout_at is not None and now >= uplink_blackout_at

        master.receive(down.poll(now), now)
        inp = operator.input_for_tick(master, now)
        out_m = master.tick(inp, now)
        if operator.done and grace_ticks is None:
            trace.duration = (operator.measurements[-1].time
                              if operator.measurements else now)
            out_m += master.send_bye(now)
            grace_ticks = k + int(0.3 / cfg.tick)
        if not blackout:
            for data in out_m:
                up.send(data, now)

        out_s = slave.tick(up.poll(now), now)
        for data in out_s:
            down.send(data, now)

        trace.times.append(now)
        trace.master_force_mag.append(
            float(np.linalg.norm(master.state.last_rendered_force)))
        trace.slave_pos.append(tuple(slave.state.actual_probe.position))
        trace.slave_halted.append(slave.state.halted)
        trace.master_phase.append(master.state.link.phase.value)
        trace.slave_phase.append(slave.state.link.phase.value)

        if master.state.link.phase != last_master_phase:
            trace.log(k, "master", "link", phase=master.state.link.phase.value)
            last_master_phase = master.state.link.phase
        if slave.state.link.phase != last_slave_phase:
            trace.log(k, "slave", "link", phase=slave.state.link.phase.value)
            last_slave_phase = slave.state.link.phase
        if slave.state.halted != last_halted:
            trace.log(k, "slave", "halted", value=slave.state.halted)
            last_halted = slave.state.halted
        while len(trace.measurements) < len(operator.measurements):
            m = operator.measurements[len(trace.measurements)]
            trace.log(k, "master", "measurement", measure=m.measure,
                      station=m.station_index, value_m=m.value_m,
                      thrombus=m.thrombus)
            trace.measurements.append(m)

        if grace_ticks is not None and k >= grace_ticks:
            break
    else:
        if not operator.done and uplink_blackout_at is None:
            raise SessionRuntimeError(
                f"scenario did not complete within {cfg.timeout} s simulated")
        trace.duration = trace.times[-1] if trace.times else 0.0

    trace.completed = operator.done
    trace.sweep_frames = operator.sweep_frames
    trace.channel_stats = {
        "up": {"sent": up.sent, "dropped": up.dropped, "delivered": up.delivered},
        "down": {"sent": down.sent, "dropped": down.dropped,
                 "delivered": down.delivered},
    }
    return trace


def estimate_grade(trace: SessionTrace) -> str | None:
    try:
        return grade_estimate(trace.sweep_frames)
    except InsufficientSweepError:
        return None
