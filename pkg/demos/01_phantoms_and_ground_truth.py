"""Build the three synthetic phantoms and inspect their ground truth.

Writes PGM previews of the true strain fields plus one speckle frame into
demos/output/.
"""

from pathlib import Path

import numpy as np

from elasto import (
    DeformationModel,
    FrameGeometry,
    make_phantom_pair,
    write_pgm,
)
from elasto.phantom import layer_strains

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

grid = FrameGeometry.from_frequencies(m=832, n=24, sampling_mhz=40.0,
                                      lateral_spacing_mm=0.4)
h = grid.height_mm
print(f"grid: {grid.m} samples x {grid.n} lines, {h:.1f} mm deep")

# four stacked layers, compressed 4% from the surface
four = DeformationModel("layers", boundaries_mm=(h / 4, h / 2, 3 * h / 4),
                        moduli_kpa=(20.0, 40.0, 80.0, 20.0), compression=0.04)
pre, post, truth = make_phantom_pair(four, grid, seed=1, psnr_db=20.0,
                                     peak_amplitude=0.25)
print("four-layer per-layer strains:",
      np.round(layer_strains(four.with_extents(h, grid.width_mm)), 5))
write_pgm(truth.strain.values, OUT / "four_layer_truth.pgm", -0.065, 0.0)
write_pgm(pre.samples, OUT / "four_layer_rf.pgm", -0.15, 0.15)

# thin stiff band inside a softer background
thin = DeformationModel("thin_layer", height_mm=40.0, boundaries_mm=(30.0, 34.0),
                        moduli_kpa=(20.0, 40.0), compression=0.04)
grid_thin = FrameGeometry.from_frequencies(m=1896, n=20, sampling_mhz=40.0,
                                           lateral_spacing_mm=0.4)
_, _, truth_thin = make_phantom_pair(thin, grid_thin, seed=1, psnr_db=None,
                                     peak_amplitude=0.25)
write_pgm(truth_thin.strain.values, OUT / "thin_layer_truth.pgm", -0.05, 0.0)
print("thin-layer band strain is half the background strain:",
      np.round(np.unique(truth_thin.strain.values), 5))

# stiff circular inclusion, 1% compression
grid_inc = FrameGeometry.from_frequencies(m=1247, n=28, sampling_mhz=40.0,
                                          lateral_spacing_mm=0.4)
inclusion = DeformationModel("inclusion", moduli_kpa=(4.0, 40.0), compression=0.01,
                             center_mm=(12.0, 5.4), radius_mm=3.5)
_, _, truth_inc = make_phantom_pair(inclusion, grid_inc, seed=1, psnr_db=None,
                                    peak_amplitude=0.25)
write_pgm(truth_inc.strain.values, OUT / "inclusion_truth.pgm", -0.012, 0.0)
center = truth_inc.strain.values[623, 14]
background = truth_inc.strain.values[100, 14]
print(f"inclusion strain: center {center:.5f} vs background {background:.5f} "
      f"(ratio {center / background:.2f})")
print("previews written to", OUT)
