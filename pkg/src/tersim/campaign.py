"""Synthetic study campaigns: seeded cohorts of phantoms, one two-arm exam
per patient, aggregated into the concordance report.

Everything is derived from the cohort seed; a fixed spec yields a
byte-identical records CSV on every run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .phantom import PhantomConfig, Aneurysm, Thrombus, ground_truth, GRADES
from .session import Scenario, Station, MeasurementSpec, SessionConfig
from .scenario_io import CohortSpec
from .exam import run_exam_pair, ExamFailure
from .stats import ExamRecord, StudyReport, campaign_report

AORTA_SWEEP_YS = (0.060, 0.040, 0.020, 0.000, -0.020, -0.038)
ILIAC_STATION_Y = -0.055
CAMPAIGN_DWELL_TICKS = 30   # campaigns run on the near-ideal preset


def _iliac_station(cfg: PhantomConfig, side: float) -> Station:
    x = side * (cfg.bifurcation_y - ILIAC_STATION_Y) * math.tan(cfg.iliac_angle)
    return Station(xy=(x, ILIAC_STATION_Y), dwell_ticks=CAMPAIGN_DWELL_TICKS)


def scenario_for_phantom(cfg: PhantomConfig, seed: int,
                         channel=None, name: str = "exam") -> Scenario:
    """Synthesize the sweep + measurement plan for one phantom.

    The AP measurement station sits at the y of the analytic maximum
    diameter (the assistant at the slave site knows where the bulge is
    widest); iliac diameters are taken over each branch.
    """
    gt = ground_truth(cfg)
    stations = [Station(xy=(0.0, y), dwell_ticks=CAMPAIGN_DWELL_TICKS)
                for y in AORTA_SWEEP_YS]
    measure_y = gt.max_ap_y
    measure_idx = None
    for i, y in enumerate(AORTA_SWEEP_YS):
        if abs(y - measure_y) < 1e-6:
            measure_idx = i
    if measure_idx is None:
        stations.append(Station(xy=(0.0, measure_y),
                                dwell_ticks=CAMPAIGN_DWELL_TICKS))
        measure_idx = len(stations) - 1
    left_idx = len(stations)
    stations.append(_iliac_station(cfg, +1.0))
    right_idx = len(stations)
    stations.append(_iliac_station(cfg, -1.0))
    measurements = (
        MeasurementSpec(measure_idx, "ap_aorta"),
        MeasurementSpec(left_idx, "ap_iliac_left"),
        MeasurementSpec(right_idx, "ap_iliac_right"),
    )
    from .netchannel import ChannelParams, PRESETS
    return Scenario(phantom=cfg, sweep=tuple(stations),
                    measurements=measurements,
                    channel=channel or PRESETS["vthd"],
                    seed=seed, name=name)


def generate_cohort(spec: CohortSpec) -> list[PhantomConfig]:
    """Seeded phantom per patient; exactly floor(n * prevalence) AAAs."""
    rng = np.random.default_rng(spec.seed)
    n = spec.n_patients
    n_aaa = int(n * spec.aaa_prevalence)
    aaa_idx = set(rng.choice(n, size=n_aaa, replace=False).tolist())
    phantoms = []
    for i in range(n):
        grade = GRADES[int(rng.choice(3, p=list(spec.grade_mix)))]
        iliac_r = float(rng.uniform(0.005, 0.0075))
        if i in aaa_idx:
            radius = float(np.clip(
                spec.aaa_radius_median * math.exp(
                    spec.aaa_radius_sigma * rng.standard_normal()),
                spec.aaa_radius_min, spec.aaa_radius_max))
            center_y = float(rng.uniform(-0.018, 0.018))
            sigma = float(rng.uniform(0.015, 0.025))
            aneurysm = Aneurysm(center_y=center_y, peak_radius=radius,
                                sigma=sigma)
            thrombus = None
            if rng.random() < spec.thrombus_prob_given_aaa:
                thrombus = Thrombus(
                    fraction=float(rng.uniform(0.25, 0.45)),
                    extent_y=(center_y - sigma, center_y + sigma))
            base = float(rng.uniform(0.009, 0.011))
            phantoms.append(PhantomConfig(
                aorta_base_radius=base, aneurysm=aneurysm, thrombus=thrombus,
                iliac_radius=iliac_r, atheromatosis_grade=grade,
                rng_seed=int(rng.integers(0, 2 ** 63))))
        else:
            radius = float(np.clip(
                rng.normal(spec.normal_radius_mean, spec.normal_radius_sd),
                spec.normal_radius_min, spec.normal_radius_max))
            phantoms.append(PhantomConfig(
                aorta_base_radius=radius, iliac_radius=iliac_r,
                atheromatosis_grade=grade,
                rng_seed=int(rng.integers(0, 2 ** 63))))
    return phantoms


@dataclass
class CampaignResult:
    records: list[ExamRecord]
    report: StudyReport
    phantoms: list[PhantomConfig]
    failures: list[dict] = field(default_factory=list)

    @property
    def n_completed(self) -> int:
        return len(self.records) // 2


def run_campaign(spec: CohortSpec, cfg: SessionConfig | None = None
                 ) -> CampaignResult:
    """Run both arms for every patient; per-patient failures are recorded,
    not fatal (mirrors an incomplete-exam rate)."""
    # 10 Hz live video is plenty for a scripted exam and halves render cost
    cfg = cfg or SessionConfig(frame_period=0.1)
    phantoms = generate_cohort(spec)
    rng = np.random.default_rng(spec.seed + 1)
    fail_idx = set()
    if spec.n_failures:
        fail_idx = set(rng.choice(spec.n_patients,
                                  size=min(spec.n_failures, spec.n_patients),
                                  replace=False).tolist())
    records: list[ExamRecord] = []
    failures: list[dict] = []
    for i, phantom in enumerate(phantoms):
        pid = f"p{i:03d}"
        pace = float(rng.uniform(0.85, 1.15))   # bedside operator pace varies
        if i in fail_idx:
            failures.append({"patient_id": pid, "reason": "injected failure"})
            continue
        scenario = scenario_for_phantom(
            phantom, seed=spec.seed * 1000 + i, channel=spec.channel,
            name=pid)
        try:
            bedside, remote, _ = run_exam_pair(scenario, pid, cfg, pace)
        except ExamFailure as exc:
            failures.append({"patient_id": pid, "reason": str(exc)})
            continue
        records.extend([bedside, remote])
    report = campaign_report(records)
    return CampaignResult(records=records, report=report,
                          phantoms=phantoms, failures=failures)
