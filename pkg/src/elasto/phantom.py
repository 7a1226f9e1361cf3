"""Synthetic phantoms: analytic deformation fields and speckle-rendered RF pairs.

Deformation closed forms
------------------------
Layered models follow 1-D series-spring equilibrium under a uniform applied
stress: per-layer strain is proportional to 1/E_k, scaled so the total
surface displacement equals compression * height.  The inclusion model is an
analytic surrogate: a uniform background strain blended into a reduced-strain
disk through a cubic smoothstep ramp in radius; its depth antiderivative is
closed-form, so ground-truth strain is exactly the derivative of ground-truth
displacement.

Speckle rendering convolves point scatterers with a separable pulse-echo PSF
(Gaussian envelope times a cosine carrier in depth, Gaussian laterally).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .io import DisplacementField, RfFrame, StrainImage

SPEED_OF_SOUND_MM_PER_US = 1.54

LAYERS = "layers"
THIN_LAYER = "thin_layer"
INCLUSION = "inclusion"
RIGID_SHIFT = "rigid_shift"
_KINDS = (LAYERS, THIN_LAYER, INCLUSION, RIGID_SHIFT)


@dataclass(frozen=True)
class FrameGeometry:
    """Acquisition grid: rows at i*axial_spacing, lines at j*lateral_spacing."""

    m: int
    n: int
    axial_spacing_mm: float = 0.01925  # c/(2 fs) at fs = 40 MHz
    lateral_spacing_mm: float = 0.2
    center_mhz: float = 7.27
    sampling_mhz: float = 40.0

    @classmethod
    def from_frequencies(cls, m, n, center_mhz=7.27, sampling_mhz=40.0, lateral_spacing_mm=0.2):
        axial = SPEED_OF_SOUND_MM_PER_US / (2.0 * sampling_mhz)
        return cls(m, n, axial, lateral_spacing_mm, center_mhz, sampling_mhz)

    @property
    def depth_mm(self) -> np.ndarray:
        return np.arange(self.m) * self.axial_spacing_mm

    @property
    def lateral_mm(self) -> np.ndarray:
        return np.arange(self.n) * self.lateral_spacing_mm

    @property
    def height_mm(self) -> float:
        return (self.m - 1) * self.axial_spacing_mm

    @property
    def width_mm(self) -> float:
        return (self.n - 1) * self.lateral_spacing_mm


@dataclass(frozen=True)
class PsfModel:
    """Separable pulse-echo point spread function.

    The depth carrier period is c/(2 fc) (round-trip phase); the axial
    envelope sigma is given in wavelengths of c/fc.  The default sigma of
    0.637 wavelengths puts the envelope FWHM at 1.5 wavelengths; a much
    longer pulse is so narrowband that displaced speckle matches better at
    a one-carrier-period hop than at the true shift.
    """

    axial_sigma_wavelengths: float = 1.5 / 2.3548
    lateral_sigma_mm: float = 0.4
    cutoff_sigmas: float = 4.0

    def axial_period_mm(self, center_mhz: float) -> float:
        return SPEED_OF_SOUND_MM_PER_US / (2.0 * center_mhz)

    def axial_sigma_mm(self, center_mhz: float) -> float:
        return self.axial_sigma_wavelengths * SPEED_OF_SOUND_MM_PER_US / center_mhz

    def cell_area_mm2(self, center_mhz: float) -> float:
        fwhm = 2.0 * math.sqrt(2.0 * math.log(2.0))
        return (fwhm * self.axial_sigma_mm(center_mhz)) * (fwhm * self.lateral_sigma_mm)


@dataclass
class ScattererField:
    """Point scatterers inside a rectangular region (depth x lateral, mm)."""

    depth_mm: np.ndarray
    lateral_mm: np.ndarray
    amplitude: np.ndarray
    depth_range_mm: tuple
    lateral_range_mm: tuple
    seed: int

    def __post_init__(self):
        self.depth_mm = np.asarray(self.depth_mm, dtype=np.float64)
        self.lateral_mm = np.asarray(self.lateral_mm, dtype=np.float64)
        self.amplitude = np.asarray(self.amplitude, dtype=np.float64)
        if not (self.depth_mm.shape == self.lateral_mm.shape == self.amplitude.shape):
            raise ValueError("scatterer arrays must share one shape")
        lo, hi = self.depth_range_mm
        if self.depth_mm.size and not ((self.depth_mm >= lo) & (self.depth_mm <= hi)).all():
            raise ValueError("scatterer depth outside region extents")
        lo, hi = self.lateral_range_mm
        if self.lateral_mm.size and not ((self.lateral_mm >= lo) & (self.lateral_mm <= hi)).all():
            raise ValueError("scatterer lateral position outside region extents")


@dataclass
class DeformationModel:
    """One of: stacked elastic layers, a thin stiff layer, a stiff circular
    inclusion, or a rigid axial shift of a depth band."""

    kind: str
    height_mm: float | None = None
    width_mm: float | None = None
    boundaries_mm: tuple = ()
    moduli_kpa: tuple = ()
    compression: float | None = None
    poisson: float = 0.49
    center_mm: tuple | None = None
    radius_mm: float | None = None
    blend_width_mm: float | None = None
    shift_samples: float | None = None
    band_mm: tuple | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown deformation kind {self.kind!r}")
        self.boundaries_mm = tuple(float(b) for b in self.boundaries_mm)
        self.moduli_kpa = tuple(float(e) for e in self.moduli_kpa)

    def with_extents(self, height_mm: float, width_mm: float) -> "DeformationModel":
        return replace(
            self,
            height_mm=self.height_mm if self.height_mm is not None else height_mm,
            width_mm=self.width_mm if self.width_mm is not None else width_mm,
        )

    def validate(self):
        if self.height_mm is None or self.width_mm is None:
            raise ValueError("model region extents are not set")
        if self.kind in (LAYERS, THIN_LAYER, INCLUSION):
            if self.compression is None or not (0.0 < self.compression <= 0.1):
                raise ValueError("compression fraction must lie in (0, 0.1]")
            if any(e <= 0 for e in self.moduli_kpa):
                raise ValueError("elastic moduli must be positive")
        if self.kind in (LAYERS, THIN_LAYER):
            b = self.boundaries_mm
            if any(b[i] >= b[i + 1] for i in range(len(b) - 1)):
                raise ValueError("layer boundaries must be strictly increasing")
            if any(not (0.0 < x < self.height_mm) for x in b):
                raise ValueError("layer boundaries must lie inside the region")
            want = len(b) + 1 if self.kind == LAYERS else 2
            if len(self.moduli_kpa) != want:
                raise ValueError(f"{self.kind} needs {want} moduli, got {len(self.moduli_kpa)}")
            if self.kind == THIN_LAYER and len(b) != 2:
                raise ValueError("thin_layer needs exactly two boundaries (band top, bottom)")
        if self.kind == INCLUSION:
            if self.center_mm is None or self.radius_mm is None or self.radius_mm < 0:
                raise ValueError("inclusion needs center_mm and radius_mm >= 0")
            if len(self.moduli_kpa) != 2:
                raise ValueError("inclusion needs (background, inclusion) moduli")
        if self.kind == RIGID_SHIFT:
            if self.shift_samples is None:
                raise ValueError("rigid_shift needs shift_samples")
            if self.band_mm is not None and (len(self.band_mm) != 2 or self.band_mm[1] <= 0):
                raise ValueError("band_mm must be (top_mm, height_mm) with positive height")


@dataclass
class GroundTruth:
    """Grid-sampled true displacement (sample units) and analytic strain."""

    displacement: DisplacementField
    strain: StrainImage


def _layer_table(model: DeformationModel):
    """Layer tops, heights, strains and cumulative displacement at layer tops."""
    height = model.height_mm
    if model.kind == THIN_LAYER:
        bounds = model.boundaries_mm
        moduli = (model.moduli_kpa[0], model.moduli_kpa[1], model.moduli_kpa[0])
    else:
        bounds = model.boundaries_mm
        moduli = model.moduli_kpa
    tops = np.concatenate(([0.0], np.asarray(bounds, dtype=np.float64)))
    bottoms = np.concatenate((np.asarray(bounds, dtype=np.float64), [height]))
    heights = bottoms - tops
    moduli = np.asarray(moduli, dtype=np.float64)
    denom = float(np.sum(heights / moduli))
    strains = -model.compression * height / (moduli * denom)
    disp_tops = np.concatenate(([0.0], np.cumsum(strains * heights)))[:-1]
    return tops, heights, strains, disp_tops


def layer_strains(model: DeformationModel) -> np.ndarray:
    """Per-layer axial strain of a layered model (dimensionless)."""
    model.validate()
    if model.kind not in (LAYERS, THIN_LAYER):
        raise ValueError(f"layer_strains needs a layered model, got {model.kind!r}")
    return _layer_table(model)[2]


def _check_inside(model, depth, lateral):
    depth = np.asarray(depth, dtype=np.float64)
    lateral = np.asarray(lateral, dtype=np.float64)
    bad = (depth < 0) | (depth > model.height_mm) | (lateral < 0) | (lateral > model.width_mm)
    if np.any(bad):
        raise ValueError("point outside phantom region")
    return depth, lateral


def analytic_layer_displacement(model: DeformationModel, depth_mm, lateral_mm):
    """Closed-form layered displacement at (depth, lateral) in mm.

    Axial displacement is zero at the surface and piecewise linear in depth;
    lateral displacement is the local Poisson expansion away from the
    centerline.  Returns (axial_mm, lateral_mm) arrays.
    """
    model.validate()
    if model.kind not in (LAYERS, THIN_LAYER):
        raise ValueError(f"expected a layered model, got {model.kind!r}")
    depth, lateral = _check_inside(model, depth_mm, lateral_mm)
    tops, heights, strains, disp_tops = _layer_table(model)
    idx = np.clip(np.searchsorted(tops, depth, side="right") - 1, 0, len(heights) - 1)
    axial = disp_tops[idx] + strains[idx] * (depth - tops[idx])
    centerline = 0.5 * model.width_mm
    lateral_disp = -model.poisson * strains[idx] * (lateral - centerline)
    return axial, lateral_disp


def _layer_strain_at(model: DeformationModel, depth) -> np.ndarray:
    tops, heights, strains, _ = _layer_table(model)
    idx = np.clip(np.searchsorted(tops, depth, side="right") - 1, 0, len(heights) - 1)
    return strains[idx]


def _smoothstep_coeffs(radius: float, width: float):
    """Cubic-smoothstep blend expressed as a polynomial b0+b1 r+b2 r^2+b3 r^3
    on the annulus [radius-width, radius+width]."""
    a = radius + width
    w = 2.0 * width
    w3 = w**3
    return (
        (3.0 * w * a * a - 2.0 * a**3) / w3,
        6.0 * a * (a - w) / w3,
        3.0 * (w - 2.0 * a) / w3,
        2.0 / w3,
    )


def _inclusion_blend(model: DeformationModel, rho):
    """Blend factor: 1 inside the plateau, 0 outside, smoothstep between."""
    radius = model.radius_mm
    width = model.blend_width_mm if model.blend_width_mm is not None else radius / 4.0
    if radius == 0.0 or width == 0.0:
        return np.where(np.asarray(rho) < radius, 1.0, 0.0) if radius > 0 else np.zeros_like(rho)
    b0, b1, b2, b3 = _smoothstep_coeffs(radius, width)
    rho = np.asarray(rho, dtype=np.float64)
    blend = np.zeros_like(rho)
    blend[rho <= radius - width] = 1.0
    on = (rho > radius - width) & (rho < radius + width)
    r = rho[on]
    blend[on] = b0 + b1 * r + b2 * r * r + b3 * r**3
    return blend


def _blend_depth_integral(model: DeformationModel, s, coff):
    """integral_0^s blend(sqrt(u^2 + coff^2)) du for s >= 0; s and coff broadcast."""
    radius = model.radius_mm
    width = model.blend_width_mm if model.blend_width_mm is not None else radius / 4.0
    s, coff = np.broadcast_arrays(np.asarray(s, dtype=np.float64),
                                  np.asarray(coff, dtype=np.float64))
    if radius == 0.0:
        return np.zeros_like(s)
    if width == 0.0:
        chord = np.sqrt(np.maximum(radius * radius - coff * coff, 0.0))
        return np.minimum(s, chord)
    t_out = np.sqrt(np.maximum((radius + width) ** 2 - coff * coff, 0.0))
    t_in = np.sqrt(np.maximum((radius - width) ** 2 - coff * coff, 0.0))
    b = _smoothstep_coeffs(radius, width)

    def anti(u):
        # antiderivative of b0 + b1*rho + b2*rho^2 + b3*rho^3, rho = hypot(u, coff)
        rho = np.hypot(u, coff)
        safe = np.where(coff > 0, coff, 1.0)
        asinh = np.where(coff > 0, np.arcsinh(u / safe), 0.0)
        base = np.where(coff > 0, u * rho + coff * coff * asinh, u * np.abs(u))
        j1 = 0.5 * base
        j2 = u**3 / 3.0 + coff * coff * u
        j3 = 0.25 * u * rho**3 + (3.0 * coff * coff / 8.0) * base
        return b[0] * u + b[1] * j1 + b[2] * j2 + b[3] * j3

    plateau = np.minimum(s, t_in)
    hi = np.clip(s, t_in, t_out)
    return plateau + anti(hi) - anti(t_in)


def analytic_inclusion_displacement(model: DeformationModel, depth_mm, lateral_mm):
    """Inclusion-surrogate displacement at (depth, lateral) in mm.

    The axial strain is the uniform background value scaled down to
    background * (E_bg / E_inc) inside the disk, blended over the smoothstep
    annulus; axial displacement is its exact depth antiderivative.
    """
    model.validate()
    if model.kind != INCLUSION:
        raise ValueError(f"expected an inclusion model, got {model.kind!r}")
    depth, lateral = _check_inside(model, depth_mm, lateral_mm)
    e_bg = -model.compression
    kappa = model.moduli_kpa[0] / model.moduli_kpa[1]
    zc, xc = model.center_mm

    depth_b, lateral_b = np.broadcast_arrays(np.atleast_1d(depth), np.atleast_1d(lateral))
    coff = np.abs(lateral_b - xc)
    t = depth_b - zc
    integ = np.sign(t) * _blend_depth_integral(model, np.abs(t), coff)
    integ0 = -np.sign(zc) * _blend_depth_integral(model, abs(zc), coff)
    axial = e_bg * (depth_b + (kappa - 1.0) * (integ - integ0))
    centerline = 0.5 * model.width_mm
    lateral_disp = -model.poisson * e_bg * (lateral_b - centerline)
    return axial, lateral_disp


def _rigid_band_mask(model: DeformationModel, depth):
    if model.band_mm is None:
        return np.ones_like(np.asarray(depth, dtype=np.float64), dtype=bool)
    top, height = model.band_mm
    depth = np.asarray(depth, dtype=np.float64)
    return (depth >= top) & (depth < top + height)


def displacement_mm(model: DeformationModel, depth_mm, lateral_mm, axial_spacing_mm: float):
    """Dispatch to the model's analytic displacement, in mm."""
    if model.kind in (LAYERS, THIN_LAYER):
        return analytic_layer_displacement(model, depth_mm, lateral_mm)
    if model.kind == INCLUSION:
        return analytic_inclusion_displacement(model, depth_mm, lateral_mm)
    depth = np.asarray(depth_mm, dtype=np.float64)
    shift = model.shift_samples * axial_spacing_mm
    axial = np.where(_rigid_band_mask(model, depth), shift, 0.0)
    return axial, np.zeros_like(np.broadcast_arrays(depth, np.asarray(lateral_mm))[1])


def strain_field(model: DeformationModel, depth_mm, lateral_mm) -> np.ndarray:
    """Analytic axial strain (the exact depth derivative of displacement_mm)."""
    depth = np.asarray(depth_mm, dtype=np.float64)
    lateral = np.asarray(lateral_mm, dtype=np.float64)
    if model.kind in (LAYERS, THIN_LAYER):
        e = _layer_strain_at(model, depth)
        return np.broadcast_arrays(e, lateral)[0].copy()
    if model.kind == INCLUSION:
        zc, xc = model.center_mm
        rho = np.hypot(depth - zc, lateral - xc)
        kappa = model.moduli_kpa[0] / model.moduli_kpa[1]
        return -model.compression * (1.0 + (kappa - 1.0) * _inclusion_blend(model, rho))
    return np.zeros(np.broadcast_shapes(depth.shape, lateral.shape), dtype=np.float64)


def make_scatterers(
    depth_range_mm,
    lateral_range_mm,
    seed: int,
    grid: FrameGeometry,
    density_per_cell: float = 12.0,
    psf: PsfModel | None = None,
) -> ScattererField:
    """Uniform random scatterers with unit-variance Gaussian amplitudes."""
    psf = psf or PsfModel()
    area = (depth_range_mm[1] - depth_range_mm[0]) * (lateral_range_mm[1] - lateral_range_mm[0])
    count = max(1, int(round(density_per_cell * area / psf.cell_area_mm2(grid.center_mhz))))
    rng = np.random.default_rng(seed)
    depth = rng.uniform(depth_range_mm[0], depth_range_mm[1], count)
    lateral = rng.uniform(lateral_range_mm[0], lateral_range_mm[1], count)
    amplitude = rng.standard_normal(count)
    return ScattererField(depth, lateral, amplitude, tuple(depth_range_mm),
                          tuple(lateral_range_mm), seed)


def render_rf(scatterers: ScattererField, grid: FrameGeometry,
              psf: PsfModel | None = None) -> RfFrame:
    """Render speckle: frame = sum over scatterers of amplitude * psf(offsets).

    Deterministic given its inputs; an empty scatterer field yields an
    all-zero frame.
    """
    psf = psf or PsfModel()
    if not (grid.axial_spacing_mm > 0 and grid.lateral_spacing_mm > 0):
        raise ValueError("grid spacings must be positive")
    sigma_ax = psf.axial_sigma_mm(grid.center_mhz)
    sigma_lat = psf.lateral_sigma_mm
    period = psf.axial_period_mm(grid.center_mhz)
    cut_ax = psf.cutoff_sigmas * sigma_ax
    cut_lat = psf.cutoff_sigmas * sigma_lat
    dz = grid.axial_spacing_mm
    dx = grid.lateral_spacing_mm

    samples = np.zeros((grid.m, grid.n), dtype=np.float64)
    for z, x, amp in zip(scatterers.depth_mm, scatterers.lateral_mm, scatterers.amplitude):
        i_lo = max(0, int(math.ceil((z - cut_ax) / dz)))
        i_hi = min(grid.m - 1, int(math.floor((z + cut_ax) / dz)))
        j_lo = max(0, int(math.ceil((x - cut_lat) / dx)))
        j_hi = min(grid.n - 1, int(math.floor((x + cut_lat) / dx)))
        if i_lo > i_hi or j_lo > j_hi:
            continue
        d_off = np.arange(i_lo, i_hi + 1) * dz - z
        l_off = np.arange(j_lo, j_hi + 1) * dx - x
        axial_vec = amp * np.cos(2.0 * np.pi * d_off / period) * np.exp(
            -0.5 * (d_off / sigma_ax) ** 2
        )
        lat_vec = np.exp(-0.5 * (l_off / sigma_lat) ** 2)
        samples[i_lo : i_hi + 1, j_lo : j_hi + 1] += np.outer(axial_vec, lat_vec)
    return RfFrame(samples, grid.axial_spacing_mm, grid.lateral_spacing_mm,
                   grid.center_mhz, grid.sampling_mhz)


def add_noise(frame: RfFrame, psnr_db: float | None, seed: int) -> RfFrame:
    """Add zero-mean Gaussian noise at the given peak SNR (dB); None passes through."""
    if psnr_db is None or np.isinf(psnr_db):
        return RfFrame(frame.samples.copy(), frame.axial_spacing_mm, frame.lateral_spacing_mm,
                       frame.center_mhz, frame.sampling_mhz)
    if not np.isfinite(psnr_db):
        raise ValueError("psnr_db must be finite or None")
    sigma = np.max(np.abs(frame.samples)) / 10.0 ** (psnr_db / 20.0)
    rng = np.random.default_rng(seed)
    noisy = frame.samples + sigma * rng.standard_normal(frame.samples.shape)
    return RfFrame(noisy, frame.axial_spacing_mm, frame.lateral_spacing_mm,
                   frame.center_mhz, frame.sampling_mhz)


def make_phantom_pair(
    model: DeformationModel,
    grid: FrameGeometry,
    seed: int,
    psnr_db: float | None = None,
    density_per_cell: float = 12.0,
    normalize: bool = True,
    peak_amplitude: float = 1.0,
    psf: PsfModel | None = None,
):
    """Pre/post RF pair plus grid-sampled ground truth.

    Scatterers are drawn over the frame extent padded by the PSF support so
    interior speckle statistics are stationary; the post frame re-renders the
    same scatterers moved by the analytic field.  With normalize=True both
    frames are scaled by one factor that puts the clean pre-frame peak at
    peak_amplitude before noise is added.  RF amplitude units are arbitrary;
    the peak sets the data-term strength relative to fixed regularization
    weights, so tuned weight sets assume a matching amplitude scale.
    """
    psf = psf or PsfModel()
    model = model.with_extents(grid.height_mm, grid.width_mm)
    model.validate()
    if model.height_mm < grid.height_mm or model.width_mm < grid.width_mm:
        raise ValueError("model region must cover the frame extent")

    pad_ax = psf.cutoff_sigmas * psf.axial_sigma_mm(grid.center_mhz)
    pad_lat = psf.cutoff_sigmas * psf.lateral_sigma_mm
    scat = make_scatterers(
        (-pad_ax, grid.height_mm + pad_ax),
        (-pad_lat, grid.width_mm + pad_lat),
        seed,
        grid,
        density_per_cell,
        psf,
    )
    pre = render_rf(scat, grid, psf)

    # displacement continues by clamped depth for pad scatterers outside the model
    z_eval = np.clip(scat.depth_mm, 0.0, model.height_mm)
    x_eval = np.clip(scat.lateral_mm, 0.0, model.width_mm)
    u_ax, u_lat = displacement_mm(model, z_eval, x_eval, grid.axial_spacing_mm)
    moved = ScattererField(
        scat.depth_mm + u_ax,
        scat.lateral_mm + u_lat,
        scat.amplitude,
        (scat.depth_range_mm[0] - abs(u_ax).max() - 1.0, scat.depth_range_mm[1] + abs(u_ax).max() + 1.0),
        (scat.lateral_range_mm[0] - abs(u_lat).max() - 1.0, scat.lateral_range_mm[1] + abs(u_lat).max() + 1.0),
        seed,
    )
    post = render_rf(moved, grid, psf)

    pre_samples, post_samples = pre.samples, post.samples
    if normalize:
        scale = np.max(np.abs(pre_samples))
        if scale > 0:
            pre_samples = pre_samples * (peak_amplitude / scale)
            post_samples = post_samples * (peak_amplitude / scale)
    pre = RfFrame(pre_samples, grid.axial_spacing_mm, grid.lateral_spacing_mm,
                  grid.center_mhz, grid.sampling_mhz)
    post = RfFrame(post_samples, grid.axial_spacing_mm, grid.lateral_spacing_mm,
                   grid.center_mhz, grid.sampling_mhz)

    noise_seeds = np.random.SeedSequence(seed).generate_state(2, dtype=np.uint64)
    pre = add_noise(pre, psnr_db, int(noise_seeds[0]))
    post = add_noise(post, psnr_db, int(noise_seeds[1]))

    depth_grid = grid.depth_mm[:, None]
    lateral_grid = grid.lateral_mm[None, :]
    g_ax, g_lat = displacement_mm(model, depth_grid, lateral_grid, grid.axial_spacing_mm)
    g_ax = np.broadcast_to(g_ax, (grid.m, grid.n)).copy()
    g_lat = np.broadcast_to(g_lat, (grid.m, grid.n)).copy()
    truth_disp = DisplacementField(
        g_ax / grid.axial_spacing_mm, g_lat / grid.lateral_spacing_mm, stage="refined"
    )
    truth_strain = StrainImage(
        np.broadcast_to(strain_field(model, depth_grid, lateral_grid), (grid.m, grid.n)).copy(),
        kernel=3,
    )
    return pre, post, GroundTruth(truth_disp, truth_strain)
