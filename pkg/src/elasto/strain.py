"""Axial strain by least-squares differentiation, plus edge-spread profiles."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .io import DisplacementField, StrainImage


def lsq_strain(field: DisplacementField, kernel: int = 3) -> StrainImage:
    """Per-column slope of an ordinary least-squares line fit to the axial
    displacement over a centered window of `kernel` samples.

    Displacement is in samples and the abscissa in samples, so the slope is
    dimensionless.  Boundary rows where the window does not fit are NaN.
    """
    if kernel % 2 == 0:
        raise ValueError(f"kernel length must be odd, got {kernel}")
    if not 3 <= kernel <= field.m:
        raise ValueError(f"kernel must lie in [3, {field.m}], got {kernel}")
    half = (kernel - 1) // 2
    offsets = np.arange(-half, half + 1)
    denom = float(np.sum(offsets * offsets))
    a = field.axial
    values = np.full_like(a, np.nan)
    core = np.zeros_like(a[half : field.m - half])
    for t in offsets:
        if t != 0:
            core += t * a[half + t : field.m - half + t]
    values[half : field.m - half] = core / denom
    return StrainImage(values, kernel=kernel)


@dataclass
class EsfProfile:
    """Strain values along one scan line with their depth axis in mm."""

    depth_mm: np.ndarray
    values: np.ndarray
    column: int

    def __post_init__(self):
        self.depth_mm = np.asarray(self.depth_mm, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.depth_mm.shape != self.values.shape or self.depth_mm.ndim != 1:
            raise ValueError("profile arrays must be 1-D and equal length")
        steps = np.diff(self.depth_mm)
        if steps.size and (np.any(steps <= 0) or not np.allclose(steps, steps[0])):
            raise ValueError("depths must increase with uniform spacing")


def esf_profile(strain: StrainImage, column: int, axial_spacing_mm: float) -> EsfProfile:
    """Extract the valid part of one strain column with its depth axis."""
    if not 0 <= column < strain.n:
        raise ValueError(f"column {column} outside [0, {strain.n})")
    rows = strain.valid_rows()
    depths = np.arange(rows.start, rows.stop) * axial_spacing_mm
    return EsfProfile(depths, strain.values[rows, column], column)


def plateau_level(profile: EsfProfile, depth_lo_mm: float, depth_hi_mm: float) -> float:
    """Median strain over a depth band, for use as an edge plateau value."""
    sel = (profile.depth_mm >= depth_lo_mm) & (profile.depth_mm <= depth_hi_mm)
    if not sel.any():
        raise ValueError(f"no profile samples in band [{depth_lo_mm}, {depth_hi_mm}] mm")
    return float(np.median(profile.values[sel]))


def _crossings(t: np.ndarray, depths: np.ndarray, level: float):
    """Interpolated depths of every crossing of `level`, in profile order."""
    out = []
    for i in range(t.size - 1):
        lo, hi = t[i] - level, t[i + 1] - level
        if lo == 0.0 and hi == 0.0:
            continue
        if lo * hi <= 0.0 and (lo != 0.0 or hi != 0.0):
            if hi == lo:
                continue
            frac = -lo / (hi - lo)
            if 0.0 <= frac <= 1.0:
                out.append(depths[i] + frac * (depths[i + 1] - depths[i]))
    return out


def edge_resolution(profile: EsfProfile, low_plateau: float, high_plateau: float) -> float:
    """Depth distance between the 10% and 90% crossings of the first
    transition between the plateaus, floored at one sample spacing.

    The transition is located from the deep (10% for a falling profile)
    crossing backward to the nearest 90% crossing, which keeps isolated
    noise blips away from the edge from widening the estimate.
    """
    if low_plateau == high_plateau:
        raise ValueError("plateau values must be distinct")
    t = (profile.values - low_plateau) / (high_plateau - low_plateau)
    depths = profile.depth_mm
    spacing = depths[1] - depths[0] if depths.size > 1 else 0.0

    falling = t[0] > 0.5
    near, far = (0.1, 0.9) if falling else (0.9, 0.1)
    deep = _crossings(t, depths, near)
    if not deep:
        raise ValueError("edge not found: profile never crosses the 10%/90% levels")
    c_deep = deep[0]
    shallow = [c for c in _crossings(t, depths, far) if c <= c_deep]
    if not shallow:
        raise ValueError("edge not found: no matching opposite crossing")
    c_shallow = shallow[-1]
    return max(abs(c_deep - c_shallow), spacing)
