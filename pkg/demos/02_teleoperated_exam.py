"""One scripted tele-echography exam, run once per channel preset.

Shows the headline property of the system: latency stretches the exam but
never changes what is measured, because measurements are taken on frozen
frames rendered at the slave.

    python3 demos/02_teleoperated_exam.py
"""

from tersim.netchannel import PRESETS as CHANNELS
from tersim.scenario_io import load_bundled_scenario
from tersim.session import run_session

scenario = load_bundled_scenario("aaa_thrombus")
print(f"scenario: {scenario.name}, {len(scenario.sweep)} stations, "
      f"{len(scenario.measurements)} measurements\n")

for preset in ("vthd", "dsl", "satellite"):
    trace = run_session(scenario, channel_params=CHANNELS[preset])
    stats = trace.channel_stats["up"]
    print(f"[{preset}] duration {trace.duration:6.2f} s  "
          f"uplink sent {stats['sent']} dropped {stats['dropped']}  "
          f"peak force {max(trace.master_force_mag):.2f} N")
    for m in trace.measurements:
        val = f"{m.value_m * 1000:.1f} mm" if m.value_m else "n/a"
        print(f"    {m.measure:15s} {val:>9s}  "
              f"thrombus {'yes' if m.thrombus else 'no'}")
    print()

print("note: the measurement values are identical on every preset; only")
print("the simulated duration grows with latency.")
