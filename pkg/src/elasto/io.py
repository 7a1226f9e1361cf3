"""Binary containers for RF frames, displacement fields and strain images.

All containers are little-endian with f32 sample payloads; in-memory arrays
are float64.  Files carry no timestamps, so identical inputs produce
byte-identical files.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

FRAME_MAGIC = b"RFE1"
FIELD_MAGIC = b"DSP1"
STRAIN_MAGIC = b"STR1"

STAGE_INTEGER_PRIOR = "integer_prior"
STAGE_REFINED = "refined"
_STAGE_CODES = {STAGE_INTEGER_PRIOR: 1, STAGE_REFINED: 2}
_STAGE_NAMES = {v: k for k, v in _STAGE_CODES.items()}


class FormatError(ValueError):
    """Malformed container: bad magic, truncated payload or invalid header."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass
class RfFrame:
    """One RF echo field: rows are depth samples, columns are scan lines."""

    samples: np.ndarray
    axial_spacing_mm: float
    lateral_spacing_mm: float
    center_mhz: float
    sampling_mhz: float

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2:
            raise ValueError("samples must be a 2-D array")
        m, n = self.samples.shape
        if m < 4 or n < 4:
            raise ValueError(f"frame must be at least 4x4, got {m}x{n}")
        if not (self.axial_spacing_mm > 0 and self.lateral_spacing_mm > 0):
            raise ValueError("sample spacings must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("frame samples must be finite")

    @property
    def m(self) -> int:
        return self.samples.shape[0]

    @property
    def n(self) -> int:
        return self.samples.shape[1]


@dataclass
class DisplacementField:
    """Per-sample axial and lateral displacements in sample/line units."""

    axial: np.ndarray
    lateral: np.ndarray
    stage: str = STAGE_REFINED

    def __post_init__(self):
        self.axial = np.asarray(self.axial, dtype=np.float64)
        self.lateral = np.asarray(self.lateral, dtype=np.float64)
        if self.axial.shape != self.lateral.shape or self.axial.ndim != 2:
            raise ValueError("axial and lateral planes must share one 2-D shape")
        if self.stage not in _STAGE_CODES:
            raise ValueError(f"unknown stage {self.stage!r}")

    @property
    def m(self) -> int:
        return self.axial.shape[0]

    @property
    def n(self) -> int:
        return self.axial.shape[1]


@dataclass
class StrainImage:
    """Dimensionless axial strain with the differentiation kernel length.

    Rows where the kernel does not fit are invalid; they are kept in the
    array (as NaN when produced by differentiation) and excluded from
    metrics via :meth:`valid_rows`.
    """

    values: np.ndarray
    kernel: int = 3

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("strain values must be a 2-D array")
        _check_kernel(self.kernel, self.values.shape[0])

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def valid_rows(self) -> slice:
        half = (self.kernel - 1) // 2
        return slice(half, self.m - half)


def _check_kernel(kernel: int, m: int | None = None):
    if kernel < 3 or kernel % 2 == 0:
        raise ValueError(f"kernel length must be odd and >= 3, got {kernel}")
    if m is not None and kernel > m:
        raise ValueError(f"kernel {kernel} exceeds row count {m}")


def _read_exact(fh, count: int, what: str, offset: int) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise FormatError(f"truncated {what}: wanted {count} bytes, got {len(data)}", offset)
    return data


def _read_magic(fh, expected: bytes):
    magic = _read_exact(fh, 4, "magic", 0)
    if magic != expected:
        raise FormatError(f"bad magic {magic!r}, expected {expected!r}", 0)


def _read_plane(fh, m: int, n: int, offset: int) -> np.ndarray:
    raw = _read_exact(fh, 4 * m * n, "sample payload", offset)
    return np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(m, n)


def write_frame(frame: RfFrame, path) -> None:
    header = struct.pack(
        "<4sIIdddd",
        FRAME_MAGIC,
        frame.m,
        frame.n,
        frame.axial_spacing_mm,
        frame.lateral_spacing_mm,
        frame.center_mhz,
        frame.sampling_mhz,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(frame.samples.astype("<f4").tobytes(order="C"))


def read_frame(path) -> RfFrame:
    with open(path, "rb") as fh:
        _read_magic(fh, FRAME_MAGIC)
        raw = _read_exact(fh, 8 + 32, "frame header", 4)
        m, n, ax, lat, fc, fs = struct.unpack("<IIdddd", raw)
        for name, value, off in (("axial spacing", ax, 12), ("lateral spacing", lat, 20),
                                 ("center frequency", fc, 28), ("sampling frequency", fs, 36)):
            if not np.isfinite(value):
                raise FormatError(f"non-finite {name} in header", off)
        samples = _read_plane(fh, m, n, 44)
    return RfFrame(samples, ax, lat, fc, fs)


def write_field(dfield: DisplacementField, path) -> None:
    if dfield.stage == STAGE_INTEGER_PRIOR:
        whole = np.equal(np.round(dfield.axial), dfield.axial) & np.equal(
            np.round(dfield.lateral), dfield.lateral
        )
        if not whole.all():
            raise ValueError("integer_prior field contains non-integer entries")
    header = struct.pack("<4sIIB", FIELD_MAGIC, dfield.m, dfield.n, _STAGE_CODES[dfield.stage])
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(dfield.axial.astype("<f4").tobytes(order="C"))
        fh.write(dfield.lateral.astype("<f4").tobytes(order="C"))


def read_field(path) -> DisplacementField:
    with open(path, "rb") as fh:
        _read_magic(fh, FIELD_MAGIC)
        raw = _read_exact(fh, 9, "field header", 4)
        m, n, code = struct.unpack("<IIB", raw)
        if code not in _STAGE_NAMES:
            raise FormatError(f"unknown stage byte {code}", 12)
        axial = _read_plane(fh, m, n, 13)
        lateral = _read_plane(fh, m, n, 13 + 4 * m * n)
    return DisplacementField(axial, lateral, stage=_STAGE_NAMES[code])


def write_strain(strain: StrainImage, path) -> None:
    header = struct.pack("<4sIII", STRAIN_MAGIC, strain.m, strain.n, strain.kernel)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(strain.values.astype("<f4").tobytes(order="C"))


def read_strain(path) -> StrainImage:
    with open(path, "rb") as fh:
        _read_magic(fh, STRAIN_MAGIC)
        raw = _read_exact(fh, 12, "strain header", 4)
        m, n, kernel = struct.unpack("<III", raw)
        try:
            _check_kernel(kernel)
        except ValueError as exc:
            raise FormatError(str(exc), 12) from exc
        values = _read_plane(fh, m, n, 16)
    return StrainImage(values, kernel=int(kernel))


def write_pgm(values: np.ndarray, path, lo: float, hi: float) -> None:
    """8-bit binary PGM over [lo, hi]; values clamp, non-finite maps to 0."""
    if not lo < hi:
        raise ValueError(f"need lo < hi, got ({lo}, {hi})")
    values = np.asarray(values, dtype=np.float64)
    scaled = 255.0 * (values - lo) / (hi - lo)
    scaled = np.where(np.isfinite(scaled), scaled, 0.0)
    pixels = np.clip(np.floor(scaled + 0.5), 0, 255).astype(np.uint8)
    m, n = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{n} {m}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes(order="C"))


def write_csv(columns: dict, path) -> None:
    """Named equal-length columns, full round-trip float precision."""
    names = list(columns.keys())
    series = [list(columns[name]) for name in names]
    lengths = {len(s) for s in series}
    if len(lengths) > 1:
        raise ValueError(f"ragged columns: lengths {sorted(lengths)}")
    rows = len(series[0]) if series else 0
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(names) + "\n")
        for r in range(rows):
            fh.write(",".join(_format_cell(col[r]) for col in series) + "\n")


def _format_cell(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))
