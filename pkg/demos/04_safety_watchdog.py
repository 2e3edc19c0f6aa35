"""Watchdog behavior when the uplink goes dark mid-exam.

Cuts the master-to-slave direction 3 s into a satellite-linked session
and shows the slave degrading, then halting within the 1 s safety budget.

    python3 demos/04_safety_watchdog.py
"""

from tersim.netchannel import PRESETS
from tersim.scenario_io import load_bundled_scenario
from tersim.session import run_session

scenario = load_bundled_scenario("aaa_54mm")
blackout = 3.0
trace = run_session(scenario, channel_params=PRESETS["satellite"],
                    uplink_blackout_at=blackout)

print(f"uplink silenced at t = {blackout:.1f} s\n")
print("slave link phase transitions:")
for e in trace.events:
    if e["actor"] == "slave":
        t = e["tick"] * 0.01
        detail = e.get("phase", e.get("value"))
        print(f"  t = {t:6.2f} s  {e['event']}: {detail}")

halted_at = next(t for t, h in zip(trace.times, trace.slave_halted)
                 if h and t >= blackout)
print(f"\nrobot halted at t = {halted_at:.2f} s "
      f"({halted_at - blackout:.2f} s after the blackout began)")
