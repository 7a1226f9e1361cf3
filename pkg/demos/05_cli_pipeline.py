"""Drive the elasto CLI end to end from one JSON config.

simulate -> estimate -> strain -> evaluate -> report, all into a run
directory; every command echoes its fully expanded effective config, and
re-running from that echo reproduces outputs byte for byte.
"""

import json
import subprocess
import sys
from pathlib import Path

RUN = Path(__file__).parent / "output" / "cli_run"
RUN.mkdir(parents=True, exist_ok=True)

config = {
    "phantom": {
        "kind": "layers",
        "boundaries_mm": [4.0, 8.0, 12.0],
        "moduli_kpa": [20.0, 40.0, 80.0, 20.0],
        "compression": 0.04,
        "grid": {"m": 832, "n": 24, "lateral_spacing_mm": 0.4},
        "seed": 12,
        "psnr_db": 20.0,
        "peak_amplitude": 0.25,
    },
    "estimate": {"i1": "I1.rfe", "i2": "I2.rfe"},
    "dp": {"smoothness": 0.16, "decimation": 8},  # ~4x the median |RF| at this peak
    "solver": {"preset": "l1soul", "second_order_multiplier": 1000.0, "eta2": 3e-5},
    "strain": {"kernel": 3, "display_range": [-0.065, 0.0]},
    "evaluate": {
        "strain": "strain.str",
        "truth": "truth.str",
        "axial_spacing_mm": 0.01925,
        "target_windows": [[180, 4, 40, 8]],
        "background_windows": [[640, 4, 40, 8]],
        "esf_column": 12,
        "esf_plateau_low_mm": [5.0, 7.0],
        "esf_plateau_high_mm": [9.0, 11.0],
    },
    "report": {"reports": ["report.json"], "labels": ["l1soul"]},
}
cfg_path = RUN / "run.json"
cfg_path.write_text(json.dumps(config, indent=2))

for command in ("simulate", "estimate", "strain", "evaluate", "report"):
    print(f"$ elasto {command} --config {cfg_path.name} --out .")
    proc = subprocess.run(
        [sys.executable, "-m", "elasto.cli", command,
         "--config", str(cfg_path), "--out", str(RUN)],
        capture_output=True, text=True,
    )
    sys.stdout.write(proc.stdout)
    sys.stderr.write(proc.stderr)
    if proc.returncode != 0:
        raise SystemExit(proc.returncode)

report = json.loads((RUN / "report.json").read_text())
print("\nreport.json:")
for key in ("snr", "cnr", "sr", "mean_ssim", "l2_error", "edge_resolution_mm"):
    print(f"  {key}: {report[key]}")
print("\nrun directory:", RUN)
print(sorted(p.name for p in RUN.iterdir()))
