"""Two-arm examination of one phantom.

The remote arm runs the full teleoperation session through the simulated
channel; the bedside arm reads the same phantom directly (zero latency,
measurement noise limited to caliper pixel quantization) and serves as
the reference.
"""

from __future__ import annotations


import numpy as np

from .phantom import (PhantomConfig, render_frame, measure_ap_from_frame,
                      detect_thrombus_in_frame, grade_estimate,
                      InsufficientSweepError, AAA_DIAMETER_THRESHOLD)
from .session import (Scenario, SessionConfig, SessionTrace, run_session,
                      station_pose, estimate_grade)
from .stats import ExamRecord

# Fixed placeholder scores: operator judgment is not modeled.
PLACEHOLDER_QUALITY_BEDSIDE = 90.0
PLACEHOLDER_QUALITY_REMOTE = 80.0
PLACEHOLDER_ACCEPTANCE = 85.0

BEDSIDE_FRAME_ID_BASE = 1 << 20     # keep bedside frame ids off the remote range


class ExamFailure(Exception):
    """One arm of an exam could not be completed."""


def _aggregate(patient_id: str, arm: str, measurements, grade: str | None,
               duration: float, quality: float) -> ExamRecord:
    ap_values = [m.value_m for m in measurements
                 if m.measure == "ap_aorta" and m.value_m is not None]
    if not ap_values:
        raise ExamFailure(f"{arm} arm produced no aortic diameter")
    if grade is None:
        raise ExamFailure(f"{arm} arm sweep insufficient for grading")

    def one(kind):
        vals = [m.value_m for m in measurements
                if m.measure == kind and m.value_m is not None]
        return max(vals) if vals else None

    ap = max(ap_values)
    thrombus = any(m.thrombus for m in measurements if m.measure == "ap_aorta")
    return ExamRecord(
        patient_id=patient_id, arm=arm,
        aaa_detected=ap >= AAA_DIAMETER_THRESHOLD,
        ap_diameter=ap, thrombus=thrombus,
        iliac_left=one("ap_iliac_left"), iliac_right=one("ap_iliac_right"),
        grade=grade, duration=duration,
        quality_score=quality, acceptance_score=PLACEHOLDER_ACCEPTANCE)


class _DirectMeasurement:
    def __init__(self, measure, value_m, thrombus):
        self.measure = measure
        self.value_m = value_m
        self.thrombus = thrombus


BEDSIDE_SPEEDUP = 2.0       # hand-held probe moves faster than teleoperation


def bedside_duration(scenario: Scenario, cfg: SessionConfig,
                     pace: float = 1.0) -> float:
    """Deterministic bedside exam duration: travel + dwell + handling.

    Travel runs at BEDSIDE_SPEEDUP times the teleoperation hand speed, so
    the remote arm of the same scenario comes out slower, as expected of
    teleoperation overhead.
    """
    travel = 0.0
    prev = np.zeros(3)
    for st in scenario.sweep:
        pos = np.array([st.xy[0], st.xy[1], st.z])
        travel += float(np.linalg.norm(pos - prev))
        prev = pos
    dwell = sum(st.dwell_ticks for st in scenario.sweep) * cfg.tick
    handling = 1.0 * len(scenario.measurements)
    return pace * (travel / (BEDSIDE_SPEEDUP * cfg.operator_v)
                   + dwell + handling)


def bedside_exam(scenario: Scenario, patient_id: str,
                 cfg: SessionConfig | None = None,
                 pace: float = 1.0) -> ExamRecord:
    """Reference arm: direct frozen reads of the phantom at each station."""
    cfg = cfg or SessionConfig()
    phantom = scenario.phantom
    measurements = []
    for m in scenario.measurements:
        pose = station_pose(scenario.sweep[m.station_index])
        frame = render_frame(phantom, pose,
                             BEDSIDE_FRAME_ID_BASE + m.station_index,
                             frozen=True)
        res = measure_ap_from_frame(frame)
        measurements.append(_DirectMeasurement(
            m.measure, res[0] if res else None,
            detect_thrombus_in_frame(frame)))
    sweep_frames = [
        render_frame(phantom, station_pose(st),
                     BEDSIDE_FRAME_ID_BASE + 4096 + i)
        for i, st in enumerate(scenario.sweep)]
    try:
        grade = grade_estimate(sweep_frames)
    except InsufficientSweepError:
        grade = None
    return _aggregate(patient_id, "bedside", measurements, grade,
                      bedside_duration(scenario, cfg, pace),
                      PLACEHOLDER_QUALITY_BEDSIDE)


def remote_exam(scenario: Scenario, patient_id: str,
                cfg: SessionConfig | None = None,
                channel_params=None, seed=None
                ) -> tuple[ExamRecord, SessionTrace]:
    """Teleoperated arm: full session through the simulated channel."""
    trace = run_session(scenario, channel_params=channel_params, seed=seed,
                        cfg=cfg)
    if not trace.completed:
        raise ExamFailure("session did not complete")
    record = _aggregate(patient_id, "remote", trace.measurements,
                        estimate_grade(trace), trace.duration,
                        PLACEHOLDER_QUALITY_REMOTE)
    return record, trace


def run_exam_pair(scenario: Scenario, patient_id: str = "p000",
                  cfg: SessionConfig | None = None, pace: float = 1.0
                  ) -> tuple[ExamRecord, ExamRecord, SessionTrace]:
    bedside = bedside_exam(scenario, patient_id, cfg, pace)
    remote, trace = remote_exam(scenario, patient_id, cfg)
    return bedside, remote, trace
