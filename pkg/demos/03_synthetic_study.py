"""Bedside-vs-remote concordance over a seeded synthetic cohort.

Generates 20 phantoms (15% aneurysm prevalence), runs both exam arms for
each, and prints the aggregated concordance report.

    python3 demos/03_synthetic_study.py
"""

from tersim.phantom import ground_truth
from tersim.scenario_io import CohortSpec
from tersim.campaign import run_campaign

spec = CohortSpec(n_patients=20, seed=42)
result = run_campaign(spec)

n_aaa = sum(ground_truth(p).has_aaa for p in result.phantoms)
print(f"cohort: {spec.n_patients} patients, {n_aaa} with an aneurysm\n")
print(result.report.to_table())

print("\nper-patient AP diameters (mm), bedside vs remote:")
by_pid = {}
for r in result.records:
    by_pid.setdefault(r.patient_id, {})[r.arm] = r
for pid in sorted(by_pid):
    b, r = by_pid[pid]["bedside"], by_pid[pid]["remote"]
    flag = " AAA" if b.aaa_detected else ""
    print(f"  {pid}  {b.ap_diameter * 1000:5.1f}  {r.ap_diameter * 1000:5.1f}"
          f"{flag}")
