"""Strain image quality metrics: SNR/CNR/SR window statistics, mean SSIM,
L2 error, CNR histograms and paired t-tests."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import betainc

from .io import StrainImage

TARGET = "target"
BACKGROUND = "background"

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

P_UNDERFLOW = 1e-300


@dataclass(frozen=True)
class WindowSpec:
    """Rectangular analysis window in (row, column) sample coordinates."""

    top: int
    left: int
    height: int
    width: int
    role: str = TARGET

    def validate(self, strain: StrainImage):
        if self.height * self.width < 4:
            raise ValueError(f"window area must be >= 4 samples, got {self.height * self.width}")
        rows = strain.valid_rows()
        if self.top < rows.start or self.top + self.height > rows.stop:
            raise ValueError(
                f"window rows [{self.top}, {self.top + self.height}) overlap invalid "
                f"strain rows (valid: [{rows.start}, {rows.stop}))"
            )
        if self.left < 0 or self.left + self.width > strain.n:
            raise ValueError(f"window columns [{self.left}, {self.left + self.width}) "
                             f"outside image width {strain.n}")

    def extract(self, strain: StrainImage) -> np.ndarray:
        self.validate(strain)
        return strain.values[self.top : self.top + self.height,
                             self.left : self.left + self.width]


def window_stats(strain: StrainImage, window: WindowSpec):
    """(mean, sample standard deviation) over a window."""
    data = window.extract(strain)
    return float(np.mean(data)), float(np.std(data, ddof=1))


def snr(background_stats) -> float:
    """Background mean over background deviation; NaN when degenerate."""
    mean, std = background_stats
    return mean / std if std != 0.0 else math.nan


def cnr(target_stats, background_stats) -> float:
    """sqrt(2 (mean_b - mean_t)^2 / (std_b^2 + std_t^2)); NaN when degenerate."""
    mt, st = target_stats
    mb, sb = background_stats
    denom = sb * sb + st * st
    if denom == 0.0:
        return math.nan
    return math.sqrt(2.0 * (mb - mt) ** 2 / denom)


def strain_ratio(target_stats, background_stats) -> float:
    """Target mean over background mean; NaN when the background mean is zero."""
    mt, _ = target_stats
    mb, _ = background_stats
    return mt / mb if mb != 0.0 else math.nan


def _as_valid_array(image, other=None) -> np.ndarray:
    if isinstance(image, StrainImage):
        rows = image.valid_rows()
        if isinstance(other, StrainImage):
            orows = other.valid_rows()
            rows = slice(max(rows.start, orows.start), min(rows.stop, orows.stop))
        return image.values[rows]
    return np.asarray(image, dtype=np.float64)


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    offsets = np.arange(size) - (size - 1) / 2.0
    one_d = np.exp(-0.5 * (offsets / sigma) ** 2)
    kern = np.outer(one_d, one_d)
    return kern / kern.sum()


def mean_ssim(ground, estimate) -> float:
    """Mean structural similarity between two strain images.

    Local statistics use an 11x11 Gaussian window (sigma 1.5) at every
    position where it fits; stabilizers are (0.01 L)^2 and (0.03 L)^2 with L
    the ground image's value range.  StrainImage inputs are compared over
    their common valid rows.
    """
    g = _as_valid_array(ground, estimate)
    e = _as_valid_array(estimate, ground)
    if g.shape != e.shape:
        raise ValueError(f"image dims differ: {g.shape} vs {e.shape}")
    if min(g.shape) < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW} samples in each direction")
    span = float(g.max() - g.min())
    if span == 0.0:
        return math.nan
    c1 = (SSIM_K1 * span) ** 2
    c2 = (SSIM_K2 * span) ** 2
    kern = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)

    def local_mean(x):
        windows = sliding_window_view(x, (SSIM_WINDOW, SSIM_WINDOW))
        return np.tensordot(windows, kern, axes=([2, 3], [0, 1]))

    mu_g = local_mean(g)
    mu_e = local_mean(e)
    var_g = local_mean(g * g) - mu_g * mu_g
    var_e = local_mean(e * e) - mu_e * mu_e
    cov = local_mean(g * e) - mu_g * mu_e
    ssim_map = ((2.0 * mu_g * mu_e + c1) * (2.0 * cov + c2)) / (
        (mu_g * mu_g + mu_e * mu_e + c1) * (var_g + var_e + c2)
    )
    return float(ssim_map.mean())


def l2_error(ground, estimate) -> float:
    """Root of the summed squared strain difference over the valid region."""
    g = _as_valid_array(ground, estimate)
    e = _as_valid_array(estimate, ground)
    if g.shape != e.shape:
        raise ValueError(f"image dims differ: {g.shape} vs {e.shape}")
    diff = e - g
    return float(np.sqrt(np.sum(diff * diff)))


def cnr_histogram(strain: StrainImage, targets, backgrounds) -> np.ndarray:
    """CNR for every (target, background) window pair, target-major order.

    Degenerate pairs (both deviations zero) come back as NaN and are meant
    to be excluded from any averaging.
    """
    if not targets or not backgrounds:
        raise ValueError("need at least one target and one background window")
    t_stats = [window_stats(strain, w) for w in targets]
    b_stats = [window_stats(strain, w) for w in backgrounds]
    return np.array([cnr(ts, bs) for ts in t_stats for bs in b_stats])


@dataclass
class TTestResult:
    t: float
    p: float
    degenerate: bool = False
    underflow: bool = False


def paired_t_test(x, y) -> TTestResult:
    """Two-tailed paired t-test; p comes from the regularized incomplete beta.

    Zero-variance differences with a nonzero mean are degenerate (p = 0 by
    convention); a zero mean with zero variance gives t = 0, p = 1.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ValueError("need two equal-length 1-D samples with n >= 2")
    d = x - y
    n = d.size
    sd = float(np.std(d, ddof=1))
    mean = float(np.mean(d))
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(0.0, 1.0)
        return TTestResult(math.copysign(math.inf, mean), 0.0, degenerate=True)
    t = mean / (sd / math.sqrt(n))
    df = n - 1
    p = float(betainc(df / 2.0, 0.5, df / (df + t * t)))
    if p < P_UNDERFLOW:
        return TTestResult(t, 0.0, underflow=True)
    return TTestResult(t, p)


@dataclass
class QualityReport:
    """Aggregated metrics for one strain estimate."""

    snr: float = math.nan
    cnr: float = math.nan
    sr: float = math.nan
    mean_ssim: float | None = None
    l2_error: float | None = None
    edge_resolution_mm: float | None = None
    cnr_histogram: list = field(default_factory=list)
    t_tests: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def clean(v):
            if isinstance(v, float) and not math.isfinite(v):
                return None
            return v

        return {
            "snr": clean(self.snr),
            "cnr": clean(self.cnr),
            "sr": clean(self.sr),
            "mean_ssim": clean(self.mean_ssim) if self.mean_ssim is not None else None,
            "l2_error": clean(self.l2_error) if self.l2_error is not None else None,
            "edge_resolution_mm": (
                clean(self.edge_resolution_mm) if self.edge_resolution_mm is not None else None
            ),
            "cnr_histogram": [clean(float(v)) for v in self.cnr_histogram],
            "t_tests": {
                k: {"t": clean(r.t), "p": clean(r.p), "degenerate": r.degenerate,
                    "underflow": r.underflow}
                for k, r in self.t_tests.items()
            },
        }
