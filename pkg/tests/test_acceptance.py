"""Acceptance gate: one test per top-level criterion, at the stated
tolerances.  Each test prints an explicit PASS line on success (visible
with `pytest -s` or in the captured output)."""

import math
import random
import time

import numpy as np
import pytest

from tersim.kinematics import (Pose, Workspace, clamp_to_workspace,
                               inverse_kinematics, forward_kinematics)
from tersim import protocol as proto
from tersim.netchannel import PRESETS as CHANNEL_PRESETS
from tersim.phantom import PRESETS as PHANTOM_PRESETS, ground_truth
from tersim.scenario_io import (bundled_scenario_names, load_bundled_scenario,
                                CohortSpec)
from tersim.session import run_session, SessionConfig, FORCE_CAP
from tersim.exam import remote_exam
from tersim.campaign import run_campaign
from tersim.stats import (pearson_r, weighted_kappa, abs_diff_buckets,
                          records_to_csv)

WS = Workspace()


def report(line):
    print(f"ACCEPTANCE PASS: {line}")


# ---------------------------------------------------------------------------

def test_primary_kinematics_roundtrip_and_idempotence():
    rng = np.random.default_rng(2026)
    pts = rng.uniform(-0.19, 0.19, size=(10_000, 2))
    t0 = time.perf_counter()
    worst = 0.0
    for xy in pts:
        rec, _ = forward_kinematics(inverse_kinematics(xy))
        worst = max(worst, float(np.linalg.norm(rec - xy)))
    elapsed = time.perf_counter() - t0
    assert worst < 1e-9
    assert elapsed < 1.0

    for _ in range(1_000):
        q = rng.standard_normal(4)
        p = Pose.make(rng.uniform(-0.3, 0.3, 3), q / np.linalg.norm(q))
        c1 = clamp_to_workspace(p)
        c2 = clamp_to_workspace(c1)
        assert np.array_equal(c1.position, c2.position)
        assert np.array_equal(c1.orientation, c2.orientation)
    report(f"kinematics: 10k FK o IK worst error {worst:.2e} m "
           f"in {elapsed:.2f} s; clamp idempotent (exact) on 1k poses")


def random_message(rng):
    kind = rng.randrange(6)
    if kind == 0:
        q = [rng.gauss(0, 1) for _ in range(4)]
        n = math.sqrt(sum(c * c for c in q))
        return proto.PoseCommand(
            tuple(rng.uniform(-1, 1) for _ in range(3)),
            tuple(c / n for c in q))
    if kind == 1:
        return proto.ForceSample(tuple(rng.uniform(-10, 10) for _ in range(3)))
    if kind == 2:
        w, h = rng.randrange(1, 32), rng.randrange(1, 32)
        return proto.UsFrameMsg(w, h, 0, rng.randrange(2 ** 31), 500,
                                bool(rng.randrange(2)), rng.randbytes(w * h))
    if kind == 3:
        return proto.Heartbeat()
    if kind == 4:
        return proto.SessionControl(proto.ControlOp(rng.randrange(6)))
    return proto.StatusReport(rng.randrange(2 ** 40), rng.randrange(2 ** 40),
                              rng.randrange(2 ** 32))


def test_primary_protocol_fuzz_and_framing():
    rng = random.Random(1)
    mismatches = 0
    for i in range(100_000):
        m = random_message(rng)
        back, info = proto.decode(proto.encode(m, i, i))
        if isinstance(m, proto.PoseCommand):
            ok = (np.allclose(back.position, m.position)
                  and np.allclose(back.quaternion, m.quaternion, atol=1e-9))
        else:
            ok = back == m
        mismatches += 0 if ok and info.seq == i else 1
    assert mismatches == 0

    allowed = (proto.NotAMessageError, proto.CorruptError,
               proto.UnsupportedError, proto.TruncatedError)
    for _ in range(20_000):
        try:
            proto.decode(rng.randbytes(rng.randrange(0, 64)))
        except allowed:
            pass

    rejected = 0
    n_corrupt = 2_000
    for i in range(n_corrupt):
        buf = bytearray(proto.encode(random_message(rng), i, i))
        buf[rng.randrange(len(buf))] ^= 1 << rng.randrange(8)
        try:
            proto.decode(bytes(buf))
        except allowed:
            rejected += 1
    assert rejected == n_corrupt

    hb = proto.encode(proto.Heartbeat(), 0, 0)
    assert len(hb) == 24
    report("protocol: 100k roundtrips, 0 mismatches; 20k random buffers, "
           "no panic; 2k corrupted frames, 100% rejected; Heartbeat = 24 B")


def test_primary_safety_all_scenarios_and_presets():
    checked = 0
    for sname in bundled_scenario_names():
        scenario = load_bundled_scenario(sname)
        for cname, params in CHANNEL_PRESETS.items():
            trace = run_session(scenario, channel_params=params)
            assert trace.completed, (sname, cname)
            assert max(trace.master_force_mag) <= FORCE_CAP + 1e-12, (sname, cname)
            for pos in trace.slave_pos:
                assert WS.contains(pos), (sname, cname)
            checked += 1

    # watchdog: silence the uplink mid-exam on every preset
    cfg = SessionConfig()
    scenario = load_bundled_scenario("aaa_54mm")
    for cname, params in CHANNEL_PRESETS.items():
        blackout = 3.0
        trace = run_session(scenario, channel_params=params,
                            uplink_blackout_at=blackout)
        halted_at = next(t for t, h in zip(trace.times, trace.slave_halted)
                         if h and t >= blackout)
        # the last pre-blackout heartbeat may still be in flight
        allowance = params.base_delay + params.jitter
        assert halted_at <= blackout + allowance + 1.0 + cfg.tick + 1e-9, cname
    report(f"safety: force <= {FORCE_CAP} N and pose in-workspace on "
           f"{checked} scenario x preset runs; watchdog halt within "
           f"1000 ms + 1 tick on all presets")


def test_primary_measurement_accuracy_54mm():
    scenario = load_bundled_scenario("aaa_54mm")
    gt = ground_truth(scenario.phantom)
    assert gt.max_ap_diameter == pytest.approx(0.054, abs=1e-12)
    record, _ = remote_exam(scenario, "p000")
    err_mm = abs(record.ap_diameter - gt.max_ap_diameter) * 1000
    assert err_mm <= 1.0
    assert record.aaa_detected
    report(f"measurement: remote AP diameter {record.ap_diameter * 1000:.1f} mm "
           f"vs analytic 54.0 mm (error {err_mm:.2f} mm <= 1 mm)")


def test_primary_synthetic_study_default_cohort():
    spec = CohortSpec()
    t0 = time.perf_counter()
    result = run_campaign(spec)
    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0, f"campaign took {elapsed:.1f} s"
    assert result.n_completed == 58

    truth = [ground_truth(p) for p in result.phantoms]
    n_aaa = sum(t.has_aaa for t in truth)
    assert n_aaa == 8
    by_pid = {}
    for r in result.records:
        by_pid.setdefault(r.patient_id, {})[r.arm] = r
    for i, t in enumerate(truth):
        arms = by_pid[f"p{i:03d}"]
        assert arms["bedside"].aaa_detected == t.has_aaa, i
        assert arms["remote"].aaa_detected == t.has_aaa, i
        if t.has_thrombus:
            assert arms["bedside"].thrombus and arms["remote"].thrombus, i

    rep = result.report
    assert rep.aorta_correlation["r"] >= 0.95
    assert rep.grade_kappa["kappa"] >= 0.8
    buckets = abs_diff_buckets(
        [(by_pid[p]["bedside"].ap_diameter, by_pid[p]["remote"].ap_diameter)
         for p in sorted(by_pid)])
    assert buckets["n"] == 58
    assert sum(buckets["counts"]) == 58
    assert rep.diff_buckets == buckets

    again = run_campaign(spec)
    assert records_to_csv(again.records) == records_to_csv(result.records)
    report(f"synthetic study: 8/8 AAAs + all thrombus in both arms; "
           f"r = {rep.aorta_correlation['r']:.3f} >= 0.95; "
           f"kappa = {rep.grade_kappa['kappa']:.3f} >= 0.8; buckets "
           f"{buckets['counts']}; byte-identical rerun; {elapsed:.1f} s < 60 s")


def test_primary_stats_oracle_equivalence():
    # pearson against the raw definition
    rng = np.random.default_rng(5)
    xs = rng.normal(0, 1, 30)
    ys = 0.9 * xs + rng.normal(0, 0.3, 30)
    mx, my = sum(xs) / 30, sum(ys) / 30
    num = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    den = math.sqrt(sum((x - mx) ** 2 for x in xs)
                    * sum((y - my) ** 2 for y in ys))
    assert pearson_r(list(zip(xs, ys)))["r"] == pytest.approx(
        num / den, abs=1e-12)

    # buckets against a literal loop
    pairs = [(0.0, d) for d in (0.001, 0.004, 0.007, 0.010, 0.02)]
    counts = [0, 0, 0]
    for a, b in pairs:
        d = abs(b - a)
        counts[0 if d < 0.004 else (1 if d <= 0.010 else 2)] += 1
    assert abs_diff_buckets(pairs)["counts"] == counts

    # grading concordance table: weighted kappa inside 0.84 +- 0.02
    table = [[14, 0, 0], [2, 8, 1], [0, 4, 24]]
    wk = weighted_kappa(table)["kappa"]
    assert wk == pytest.approx(0.8545668365346923, abs=1e-12)
    assert abs(wk - 0.84) <= 0.02
    report(f"stats: pearson/buckets match brute-force oracles at 1e-12; "
           f"grading-table weighted kappa {wk:.4f} within 0.84 +- 0.02")


def test_primary_latency_non_distortion():
    scenario = load_bundled_scenario("aaa_54mm")
    runs = {}
    for preset in ("vthd", "satellite"):
        trace = run_session(scenario, channel_params=CHANNEL_PRESETS[preset])
        runs[preset] = trace
    vals = {
        p: [(m.measure, m.value_m, m.thrombus) for m in t.measurements]
        for p, t in runs.items()
    }
    assert vals["vthd"] == vals["satellite"]        # bit-exact
    assert runs["satellite"].duration > runs["vthd"].duration
    report(f"latency non-distortion: identical measurements on vthd and "
           f"satellite; durations {runs['vthd'].duration:.2f} s vs "
           f"{runs['satellite'].duration:.2f} s")
