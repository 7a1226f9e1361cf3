"""Quantify strain image quality on the stiff-inclusion phantom.

Computes SNR/CNR/strain-ratio from analysis windows, the 6x20 CNR histogram,
mean SSIM and L2 error against ground truth, and a paired t-test between two
estimators' histograms.
"""

import numpy as np

from elasto import (
    DeformationModel,
    DpConfig,
    FrameGeometry,
    dp_estimate,
    make_phantom_pair,
    refine,
)
from elasto.metrics import (
    WindowSpec,
    cnr,
    cnr_histogram,
    l2_error,
    mean_ssim,
    paired_t_test,
    snr,
    strain_ratio,
    window_stats,
)
from elasto.solver import make_solver_config
from elasto.strain import lsq_strain

grid = FrameGeometry.from_frequencies(m=1247, n=28, sampling_mhz=40.0,
                                      lateral_spacing_mm=0.4)
model = DeformationModel("inclusion", moduli_kpa=(4.0, 40.0), compression=0.01,
                         center_mm=(12.0, 5.4), radius_mm=3.5)
pre, post, truth = make_phantom_pair(model, grid, seed=301, psnr_db=20.0,
                                     peak_amplitude=0.25)
median_amp = float(np.median(np.abs(pre.samples)))
prior = dp_estimate(pre, post, DpConfig(axial_range=16, smoothness=4 * median_amp,
                                        decimation=8))

# targets tile the inclusion plateau, tall enough that smoothing halos leak
# texture into them; backgrounds sit above/below the inclusion
target = WindowSpec(520, 11, 206, 6, "target")
background = WindowSpec(120, 4, 150, 8, "background")
targets = [WindowSpec(top, left, 115, 3, "target")
           for top in (505, 628) for left in (11, 13, 15)]
backgrounds = [WindowSpec(top, left, 60, 8, "background")
               for top in (60, 125, 190, 255, 320, 860, 925, 990, 1055, 1120)
               for left in (3, 17)]

histograms = {}
for name, cfg in (
    ("soul", make_solver_config("soul", 50.0, alpha1=40, alpha2=0.05, beta1=20,
                                beta2=0.025, eta0=1e-4, eta1=1e-3, eta2=5e-4)),
    ("l1soul", make_solver_config("l1soul", 50.0, alpha1=60, alpha2=0.05, beta1=30,
                                  beta2=0.025, eta0=1e-4, eta1=2e-2, eta2=1e-3)),
):
    refined, _ = refine(pre, post, prior, cfg)
    strain = lsq_strain(refined, 3)
    t_stats = window_stats(strain, target)
    b_stats = window_stats(strain, background)
    hist = cnr_histogram(strain, targets, backgrounds)
    histograms[name] = hist
    print(f"{name:7s} SNR={snr(b_stats):7.2f}  CNR={cnr(t_stats, b_stats):6.2f}  "
          f"SR={strain_ratio(t_stats, b_stats):.3f}  "
          f"mean SSIM={mean_ssim(truth.strain, strain):.3f}  "
          f"L2={l2_error(truth.strain, strain):.2f}  "
          f"mean CNR over {hist.size} pairs={np.nanmean(hist):.2f}")

result = paired_t_test(histograms["l1soul"], histograms["soul"])
print(f"\npaired t-test, l1soul vs soul CNR histograms: "
      f"t = {result.t:.2f}, p = {result.p:.2e}")
