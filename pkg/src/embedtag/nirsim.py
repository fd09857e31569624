"""Near-infrared raster scan of a surface-fill print.

Each scan pixel is a vertical column through the object. Light crosses the
filament down to the white reflector and back (attenuation exp(-2 mu z));
whatever the reflector does not return, the object's own scattering floor
does:

    R(lambda) = r_obj (1 - e) + r_white e,   e = exp(-2 mu(lambda) z)

Columns with no reflector return r_obj. The scanner spot is Gaussian, so
the cube is the reflectance map blurred by the spot and sampled on the
raster.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import BadMagic, LengthMismatch, SpecViolation, WindowOutOfBounds
from .geometry import EMPTY, INFO, EmbedSpec, Mode, VoxelGrid

N_BANDS = 228
LAMBDA_MIN, LAMBDA_MAX = 900.0, 1700.0
WHITE_REFLECTANCE = 0.9
SCATTER_FLOOR = 0.15
MAGIC = b"NIRC"


def wavelength_grid(n=N_BANDS):
    return np.linspace(LAMBDA_MIN, LAMBDA_MAX, n)


@dataclass(frozen=True)
class ColorOptics:
    """Spectral absorption (1/mm) and scattering floor of one filament color,
    as smooth curves ``base * (1 + ripple * cos(2 pi (lambda - 900) / period))``."""

    name: str
    mu: float
    reflectance: float
    mu_ripple: float = 0.0
    r_ripple: float = 0.0
    period_nm: float = 800.0

    def __post_init__(self):
        if self.mu < 0 or not 0 <= self.reflectance <= 1:
            raise ValueError(f"bad optics for {self.name}")
        if abs(self.mu_ripple) > 1 or self.reflectance * (1 + abs(self.r_ripple)) > 1:
            raise ValueError(f"ripple takes optics for {self.name} out of range")

    def _shape(self, lam):
        return np.cos(2 * np.pi * (np.asarray(lam) - LAMBDA_MIN) / self.period_nm)

    def mu_at(self, lam):
        return self.mu * (1 + self.mu_ripple * self._shape(lam))

    def r_at(self, lam):
        return self.reflectance * (1 + self.r_ripple * self._shape(lam))


# Non-black colors share one absorption level calibrated so a reflector
# 3 mm down still reads and one 4 mm down sinks below the noise.
DEFAULT_OPTICS = {
    "blue": ColorOptics("blue", 0.9, SCATTER_FLOOR, 0.10, 0.05, 800.0),
    "gray": ColorOptics("gray", 0.9, SCATTER_FLOOR, 0.05, 0.02, 400.0),
    "orange": ColorOptics("orange", 0.9, SCATTER_FLOOR, -0.10, 0.08, 1600.0),
    "red": ColorOptics("red", 0.9, SCATTER_FLOOR, 0.08, -0.06, 1200.0),
    "black": ColorOptics("black", 6.0, 0.03, 0.02, 0.02, 800.0),
    "white": ColorOptics("white", 0.05, WHITE_REFLECTANCE),
}


@dataclass
class ScanSettings:
    width: int = 24
    height: int = 24
    step_mm: float = 1.0
    seed: int = 0
    noise_sigma: float = 0.0042  # per band, reflectance units
    spot_sigma_mm: float = 0.5
    # raster registration offset against the print
    phase_mm: float = 0.0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise SpecViolation("scan resolution must be positive")
        if not self.step_mm > 0:
            raise SpecViolation("step must be positive")
        if self.noise_sigma < 0 or self.spot_sigma_mm < 0:
            raise SpecViolation("noise and spot size must be >= 0")


@dataclass
class SpectraCube:
    """Reflectance cube stored (row, col, band) as float32."""

    wavelengths: np.ndarray
    data: np.ndarray
    step_mm: float = 1.0

    def __post_init__(self):
        self.wavelengths = np.asarray(self.wavelengths, dtype=np.float32)
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3 or self.data.shape[2] != len(self.wavelengths):
            raise ValueError("data must be (rows, cols, bands) matching the wavelength grid")
        if len(self.wavelengths) and (np.any(np.diff(self.wavelengths) <= 0)
                                      or self.wavelengths[0] < LAMBDA_MIN
                                      or self.wavelengths[-1] > LAMBDA_MAX):
            raise ValueError("wavelengths must increase within [900, 1700] nm")
        if not np.all(np.isfinite(self.data)) or self.data.min(initial=0) < 0 or self.data.max(initial=0) > 1:
            raise ValueError("reflectance must lie in [0, 1]")

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    def mean_image(self):
        return self.data.astype(np.float64).mean(axis=2)

    def __eq__(self, other):
        return (isinstance(other, SpectraCube) and self.step_mm == other.step_mm
                and np.array_equal(self.wavelengths, other.wavelengths)
                and np.array_equal(self.data, other.data))


def reflector_depth(grid: VoxelGrid):
    """Per (x, y) column: depth in mm from the column's top surface to the
    first Info voxel, NaN where the column has no Info. Also returns the
    mask of columns holding material."""
    material = grid.cells != EMPTY
    info = grid.cells == INFO
    nz = grid.cells.shape[2]
    has_mat = material.any(axis=2)
    top = nz - 1 - np.argmax(material[:, :, ::-1], axis=2)
    has_info = info.any(axis=2)
    first_info = nz - 1 - np.argmax(info[:, :, ::-1], axis=2)
    depth = (top - first_info) * grid.pitch
    return np.where(has_info, depth, np.nan), has_mat


def reflectance_map(depth, optics: ColorOptics, lam, white=DEFAULT_OPTICS["white"]):
    """(nx, ny, bands) reflectance of each column."""
    r_obj = optics.r_at(lam)[None, None, :]
    r_w = white.r_at(lam)[None, None, :]
    e = np.exp(-2.0 * optics.mu_at(lam)[None, None, :] * np.nan_to_num(depth, nan=np.inf)[:, :, None])
    return r_obj * (1.0 - e) + r_w * e


def raster_positions(grid: VoxelGrid, scan: ScanSettings):
    """Scan-pixel centres (x, y) in mm, centred on the object's top face and
    shifted by the registration phase.
    Raises WindowOutOfBounds if the window leaves the footprint."""
    material = (grid.cells != EMPTY).any(axis=2)
    xs, ys = grid.centers(0), grid.centers(1)
    ix, iy = np.nonzero(material)
    h = grid.pitch / 2
    x0, x1 = xs[ix.min()] - h, xs[ix.max()] + h
    y0, y1 = ys[iy.min()] - h, ys[iy.max()] + h
    cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
    px = cx + scan.phase_mm + (np.arange(scan.width) - (scan.width - 1) / 2) * scan.step_mm
    py = cy + scan.phase_mm + (np.arange(scan.height) - (scan.height - 1) / 2) * scan.step_mm
    half = scan.step_mm / 2
    tol = 1e-9
    if px[0] - half < x0 - tol or px[-1] + half > x1 + tol or py[0] - half < y0 - tol or py[-1] + half > y1 + tol:
        raise WindowOutOfBounds(
            f"{scan.width}x{scan.height} window at {scan.step_mm} mm exceeds the "
            f"{x1 - x0:.1f}x{y1 - y0:.1f} mm footprint")
    return px, py


def simulate_scan(grid: VoxelGrid, spec: EmbedSpec, optics=None, scan: ScanSettings | None = None,
                  color=None) -> SpectraCube:
    scan = scan or ScanSettings()
    optics = optics or DEFAULT_OPTICS
    color = color or spec.object_color
    if color not in optics:
        raise SpecViolation(f"no optics for color {color!r}")
    if Mode(spec.mode) is Mode.SURFACE_JOIN:
        warnings.warn("near-infrared reading expects a surface-fill print", stacklevel=2)
    px, py = raster_positions(grid, scan)
    lam = wavelength_grid()
    depth, _ = reflector_depth(grid)
    refl = reflectance_map(depth, optics[color], lam, optics.get("white", DEFAULT_OPTICS["white"]))
    sig = scan.spot_sigma_mm / grid.pitch
    if sig > 0:
        refl = ndimage.gaussian_filter(refl, (sig, sig, 0), mode="nearest")
    # fractional grid indices of the raster points (centres at origin + (i + 0.5) pitch)
    fx = (px - grid.origin[0]) / grid.pitch - 0.5
    fy = (py - grid.origin[1]) / grid.pitch - 0.5
    FY, FX = np.meshgrid(fy, fx, indexing="ij")
    data = np.empty((scan.height, scan.width, len(lam)))
    for b in range(len(lam)):
        data[:, :, b] = ndimage.map_coordinates(refl[:, :, b], [FX, FY], order=1, mode="nearest")
    if scan.noise_sigma > 0:
        rng = np.random.Generator(np.random.Philox(key=int(scan.seed) & (2**64 - 1)))
        data += rng.normal(0.0, scan.noise_sigma, size=data.shape)
    return SpectraCube(lam, np.clip(data, 0.0, 1.0), scan.step_mm)


def write_cube(cube: SpectraCube, path):
    h, w, nb = cube.data.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIIf", w, h, nb, cube.step_mm))
        fh.write(cube.wavelengths.astype("<f4").tobytes())
        fh.write(cube.data.astype("<f4").tobytes())


def parse_cube(raw: bytes) -> SpectraCube:
    if raw[:4] != MAGIC:
        raise BadMagic(f"expected NIRC magic, got {raw[:4]!r}")
    if len(raw) < 20:
        raise LengthMismatch(f"header needs 20 bytes, file has {len(raw)}")
    w, h, nb, step = struct.unpack_from("<IIIf", raw, 4)
    expected = 20 + 4 * nb + 4 * w * h * nb
    if len(raw) != expected:
        raise LengthMismatch(f"{w}x{h}x{nb} cube needs {expected} bytes, file has {len(raw)}")
    lam = np.frombuffer(raw, dtype="<f4", count=nb, offset=20)
    data = np.frombuffer(raw, dtype="<f4", offset=20 + 4 * nb).reshape(h, w, nb)
    return SpectraCube(lam.astype(np.float32), data.astype(np.float32), float(step))


def read_cube(path) -> SpectraCube:
    with open(path, "rb") as fh:
        return parse_cube(fh.read())
