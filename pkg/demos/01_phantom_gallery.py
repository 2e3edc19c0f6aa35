"""Render a gallery of B-mode slices from the bundled phantoms.

Writes PGM images to ./gallery and prints the analytic ground truth next
to the measurement the wall-gap detector reads off each image.

    python3 demos/01_phantom_gallery.py
"""

from pathlib import Path

from tersim.kinematics import Pose
from tersim.phantom import (PRESETS, ground_truth, render_frame,
                            measure_ap_from_frame, detect_thrombus_in_frame)

out = Path("gallery")
out.mkdir(exist_ok=True)

for name, cfg in PRESETS.items():
    gt = ground_truth(cfg)
    pose = Pose.make((0.0, gt.max_ap_y, -0.003))
    frame = render_frame(cfg, pose, frame_id=1)
    (out / f"{name}.pgm").write_bytes(frame.to_pgm())

    res = measure_ap_from_frame(frame)
    measured = f"{res[0] * 1000:.1f} mm" if res else "no vessel in view"
    print(f"{name:24s} truth {gt.max_ap_diameter * 1000:5.1f} mm  "
          f"measured {measured:>14s}  "
          f"thrombus {'yes' if detect_thrombus_in_frame(frame) else 'no':3s}  "
          f"grade {gt.grade}")

print(f"\nwrote {len(PRESETS)} images to {out}/")
