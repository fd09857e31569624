"""Transient heat conduction through a voxelized print and synthetic
thermal-camera recordings of the press-and-release reading procedure.

Explicit finite volumes on the voxel grid: face conductance is the harmonic
mean of the two cell conductivities, flux across a face is
``-k A dT / dx``. Units inside the solver are SI; pitches arrive in mm.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import FormatError, SpecViolation, UnstableDt
from .geometry import EMPTY, INFO, OBJECT, EmbedSpec, Mode, VoxelGrid


@dataclass(frozen=True)
class MaterialProps:
    k: float  # W/(m K)
    rho: float  # kg/m^3
    c: float  # J/(kg K)

    def __post_init__(self):
        if not (self.k > 0 and self.rho > 0 and self.c > 0):
            raise ValueError(f"material properties must be positive: {self}")

    @property
    def rho_c(self):
        return self.rho * self.c


PLA = MaterialProps(k=0.13, rho=1240.0, c=1800.0)
AIR = MaterialProps(k=0.026, rho=1.2, c=1005.0)


@dataclass(frozen=True)
class ThermalConstants:
    """Frozen calibration of the thermal model."""

    filament: MaterialProps = PLA
    air: MaterialProps = AIR
    shell_mm: float = 0.5  # solid skin printed on every outer face
    h_conv: float = 10.0  # W/(m^2 K) at a surface excess of h_ref_dt
    h_exponent: float = 0.25  # laminar natural convection, h ~ dT^(1/4)
    h_ref_dt: float = 8.0  # K
    sim_pitch_mm: float = 0.5
    camera_margin_mm: float = 5.0
    camera_pixel_mm: float = 1.5  # detector footprint on the object, a multiple of sim_pitch_mm
    camera_psf_mm: float = 0.0  # Gaussian optical blur, sigma
    contact_tilt: float = 0.03  # contact excess varies by this fraction across the object width (x)
    join_reach_mm: float | None = 0.5  # cap on the surface-join bridge, see geometry.apply_mode
    dt_safety: float = 0.9


DEFAULT_CONSTANTS = ThermalConstants()


@dataclass
class ThermalScenario:
    contact_temp: float = 35.0
    contact_duration: float = 3.0
    ambient_temp: float = 27.0
    record_duration: float = 60.0
    frame_rate: float = 6.0
    noise_sigma: float = 0.05
    seed: int = 0

    def validate(self):
        if not self.record_duration > 0:
            raise SpecViolation("record_duration must be positive")
        if not self.frame_rate > 0:
            raise SpecViolation("frame_rate must be positive")
        if self.contact_duration < 0:
            raise SpecViolation("contact_duration must be >= 0")
        if self.noise_sigma < 0:
            raise SpecViolation("noise_sigma must be >= 0")
        return self


# named reading conditions, contact temperature in degC
CONDITIONS = {"cold": 10.0, "cool": 20.0, "hand": 35.0, "warm": 40.0, "hot": 50.0}


@dataclass
class ThermalRecording:
    times: np.ndarray
    frames: np.ndarray  # (n, rows, cols) degC
    contact_end: float | None = None
    info_mask: np.ndarray | None = field(default=None, repr=False)
    # pixels over the payload's bounding rectangle, the region a decoder reads
    footprint_mask: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3 or len(self.frames) != len(self.times):
            raise ValueError("frames must be (n, rows, cols) with one timestamp per frame")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("temperatures must be finite")

    def __len__(self):
        return len(self.times)

    def post_contact_index(self):
        """Index of the first frame at or after contact release."""
        end = 0.0 if self.contact_end is None else self.contact_end
        idx = np.nonzero(self.times >= end - 1e-9)[0]
        return int(idx[0]) if len(idx) else None


# ------------------------------------------------------------- material grid


@dataclass
class HeatProps:
    """Per-voxel conductivity and volumetric heat capacity. Inactive voxels
    are outside the conducting body."""

    k: np.ndarray
    rho_c: np.ndarray
    active: np.ndarray

    @classmethod
    def uniform(cls, shape, material: MaterialProps):
        return cls(np.full(shape, material.k), np.full(shape, material.rho_c),
                   np.ones(shape, dtype=bool))


def effective_props(f, filament=PLA, air=AIR):
    """Linear filament/air mixture at infill fraction ``f``."""
    k = f * filament.k + (1 - f) * air.k
    rho = f * filament.rho + (1 - f) * air.rho
    rho_c = f * filament.rho_c + (1 - f) * air.rho_c
    return MaterialProps(k=k, rho=rho, c=rho_c / rho)


def solid_mask(grid: VoxelGrid, shell_mm, pitch=None):
    """Voxels printed fully dense: info body, joined/filled layers, and the
    outer skin of thickness ``shell_mm``."""
    material = grid.cells != EMPTY
    n = max(1, int(round(shell_mm / grid.pitch))) if shell_mm > 0 else 0
    if n:
        core = ndimage.binary_erosion(material, iterations=n, border_value=0)
        shell = material & ~core
    else:
        shell = np.zeros_like(material)
    solid = shell | (grid.cells == INFO)
    if grid.solid is not None:
        solid |= grid.solid & material
    return solid


def material_grid(grid: VoxelGrid, spec: EmbedSpec, constants=DEFAULT_CONSTANTS) -> HeatProps:
    fil, air = constants.filament, constants.air
    eff = effective_props(spec.infill_fraction, fil, air)
    material = grid.cells != EMPTY
    solid = solid_mask(grid, constants.shell_mm)
    k = np.full(grid.cells.shape, air.k)
    rho_c = np.full(grid.cells.shape, air.rho_c)
    infill = material & ~solid
    k[infill] = eff.k
    rho_c[infill] = eff.rho_c
    k[solid] = fil.k
    rho_c[solid] = fil.rho_c
    return HeatProps(k, rho_c, material)


# ------------------------------------------------------------------- solver


def _harmonic(a, b):
    s = a + b
    return np.where(s > 0, 2.0 * a * b / np.where(s > 0, s, 1.0), 0.0)


class HeatSolver:
    """Explicit conduction operator on a voxel field.

    Faces between an active voxel and the outside (inactive voxels or the
    grid edge) exchange heat with ``ambient`` through ``h`` (h = 0 gives an
    insulated body). With ``h_exponent`` > 0 the film coefficient follows a
    natural-convection law h * (|T - ambient| / h_ref_dt) ** h_exponent.
    The +z faces of the topmost active voxels can instead be held at a
    contact temperature through a half-voxel conductance.
    """

    _DT_FLOOR = 0.1  # K, keeps the convection law finite near ambient

    def __init__(self, props: HeatProps, pitch_mm, h=0.0, ambient=0.0, h_exponent=0.0, h_ref_dt=8.0):
        self.props = props
        self.pitch_mm = float(pitch_mm)
        self.h_exponent = float(h_exponent)
        self.h_ref_dt = float(h_ref_dt)
        p = self.pitch_mm * 1e-3
        act = props.active
        k = np.where(act, props.k, 0.0)
        self.rho_c = np.where(act, props.rho_c, 1.0)
        self.ambient = float(ambient)
        self.G = []
        for axis in range(3):
            lo = [slice(None)] * 3
            hi = [slice(None)] * 3
            lo[axis] = slice(None, -1)
            hi[axis] = slice(1, None)
            self.G.append(_harmonic(k[tuple(lo)], k[tuple(hi)]) / p**2)
        padded = np.pad(act, 1, constant_values=False)
        inner = (slice(1, -1),) * 3
        exposed = np.zeros(act.shape, dtype=np.int16)
        top = None
        for axis in range(3):
            for step in (-1, 1):
                nb = np.roll(padded, -step, axis=axis)[inner]
                face = act & ~nb
                if axis == 2 and step == 1:
                    top = face
                else:
                    exposed += face
        self.top = top
        self.H_side = h * exposed / p
        self.H_top = h * top / p
        self.G_contact = np.where(top, 2.0 * k / p**2, 0.0)
        self.diag = sum(self._face_sum(axis) for axis in range(3))
        # boundary work touches only exposed cells
        self._bnd = np.flatnonzero((exposed > 0) | top)
        self._Hs_b = self.H_side.ravel()[self._bnd]
        self._Ht_b = self.H_top.ravel()[self._bnd]
        self._Gc_b = self.G_contact.ravel()[self._bnd]
        self._rc_b = self.rho_c.ravel()[self._bnd]
        self._inactive = ~act
        has_top = top.any(axis=2)
        k_top = top.shape[2] - 1 - np.argmax(top[:, :, ::-1], axis=2)
        ii, jj = np.indices(has_top.shape)
        self._has_top = has_top
        self._top_idx = np.ravel_multi_index((ii, jj, k_top), top.shape)

    def _face_sum(self, axis):
        g = self.G[axis]
        out = np.zeros(self.rho_c.shape)
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        out[tuple(lo)] += g
        out[tuple(hi)] += g
        return out

    @property
    def dt_max(self):
        """Stability bound min(rho c pitch^2 / (6 k)) over active voxels."""
        p = self.pitch_mm * 1e-3
        act = self.props.active
        return float(np.min(self.props.rho_c[act] * p**2 / (6.0 * self.props.k[act])))

    def h_factor(self, T):
        if not self.h_exponent:
            return 1.0
        dT = np.maximum(np.abs(T - self.ambient), self._DT_FLOOR)
        return (dT / self.h_ref_dt) ** self.h_exponent

    def dt_stable(self, contact=False, max_excess=None):
        """Largest dt keeping every update a convex combination.
        ``max_excess`` bounds |T - ambient| for the convection law."""
        f = 1.0
        if self.h_exponent and max_excess is not None:
            f = max(1.0, float(self.h_factor(self.ambient + max_excess)))
        d = self.diag + f * self.H_side + (self.G_contact if contact else f * self.H_top)
        act = self.props.active
        return float(np.min(self.rho_c[act] / np.maximum(d[act], 1e-300)))

    def rate(self, T, contact_temp=None):
        dT = np.zeros_like(T)
        for axis in range(3):
            lo = [slice(None)] * 3
            hi = [slice(None)] * 3
            lo[axis] = slice(None, -1)
            hi[axis] = slice(1, None)
            lo, hi = tuple(lo), tuple(hi)
            flux = self.G[axis] * (T[hi] - T[lo])
            dT[lo] += flux
            dT[hi] -= flux
        dT /= self.rho_c
        Tb = T.ravel()[self._bnd]
        gap = self.ambient - Tb
        f = self.h_factor(Tb)
        q = f * self._Hs_b * gap
        if contact_temp is None:
            q += f * self._Ht_b * gap
        else:
            src = np.broadcast_to(np.asarray(contact_temp, dtype=np.float64), T.shape).ravel()[self._bnd]
            q += self._Gc_b * (src - Tb)
        flat = dT.reshape(-1)
        flat[self._bnd] += q / self._rc_b
        dT[self._inactive] = 0.0
        return dT

    def step(self, T, dt, contact_temp=None):
        if dt > self.dt_max:
            raise UnstableDt(f"dt={dt:.6g} s exceeds the stability bound {self.dt_max:.6g} s")
        return T + dt * self.rate(T, contact_temp)

    def surface_temperature(self, T, contact_temp=None):
        """Temperature of the +z face of every topmost active voxel, per
        (x, y) column; NaN for columns with no material."""
        idx = self._top_idx
        if contact_temp is not None:
            surf = np.broadcast_to(np.asarray(contact_temp, dtype=np.float64), T.shape).ravel()[idx]
        else:
            # face between the cell (conductance 2k/p) and the air film (h)
            p = self.pitch_mm * 1e-3
            Tt = T.ravel()[idx]
            gf = self.G_contact.ravel()[idx] * p
            hf = self.h_factor(Tt) * self.H_top.ravel()[idx] * p
            surf = (gf * Tt + hf * self.ambient) / np.where(gf + hf > 0, gf + hf, 1.0)
        return np.where(self._has_top, surf, np.nan)


def enthalpy(T, props: HeatProps, pitch_mm):
    v = (pitch_mm * 1e-3) ** 3
    return float(np.sum(props.rho_c[props.active] * T[props.active]) * v)


def step_heat(state, props: HeatProps, dt, pitch_mm=0.5, h=0.0, ambient=0.0, contact_temp=None):
    """One explicit step. Rebuilds the operator; use HeatSolver in loops."""
    return HeatSolver(props, pitch_mm, h=h, ambient=ambient).step(
        np.asarray(state, dtype=np.float64), dt, contact_temp
    )


# ---------------------------------------------------------------- recording


def frame_times(scenario: ThermalScenario):
    n = int(round(scenario.frame_rate * (scenario.contact_duration + scenario.record_duration)))
    return np.arange(1, n + 1) / scenario.frame_rate


def _frame_noise(seed, index, shape, sigma):
    if sigma == 0:
        return np.zeros(shape)
    rng = np.random.Generator(np.random.Philox(key=int(seed) & (2**64 - 1), counter=[index, 0, 0, 0]))
    return rng.normal(0.0, sigma, size=shape)


def _bin_factor(pitch_mm, constants):
    f = constants.camera_pixel_mm / pitch_mm
    n = int(round(f))
    if n < 1 or abs(f - n) > 1e-6:
        raise SpecViolation(
            f"camera pixel {constants.camera_pixel_mm} mm is not a multiple of the grid pitch {pitch_mm} mm")
    return n


def _bin(img, n, fill):
    """Average n x n blocks, padding the far edges with ``fill``."""
    if n == 1:
        return img
    h, w = img.shape
    ph, pw = -h % n, -w % n
    img = np.pad(img, ((0, ph), (0, pw)), constant_values=fill)
    return img.reshape(img.shape[0] // n, n, img.shape[1] // n, n).mean(axis=(1, 3))


def _camera_view(surface, ambient, pitch_mm, constants):
    """Top-view image: the surface map framed by an ambient margin, averaged
    over detector pixels and blurred by the lens PSF. Frames are
    (rows=y, cols=x)."""
    img = np.where(np.isnan(surface), ambient, surface)
    m = int(round(constants.camera_margin_mm / pitch_mm))
    if m:
        img = np.pad(img, m, constant_values=ambient)
    img = _bin(img, _bin_factor(pitch_mm, constants), ambient)
    if constants.camera_psf_mm > 0:
        img = ndimage.gaussian_filter(img, constants.camera_psf_mm / constants.camera_pixel_mm,
                                      mode="nearest")
    return img.T


def contact_field(grid: VoxelGrid, scenario: ThermalScenario, constants=DEFAULT_CONSTANTS):
    """Per-column contact temperature, shape (nx, ny, 1). A tilted contact
    delivers an excess over ambient that ramps linearly in x by
    ``contact_tilt`` (as a fraction) across the object width."""
    amb = scenario.ambient_temp
    excess = scenario.contact_temp - amb
    material = (grid.cells != EMPTY).any(axis=(1, 2))
    xs = grid.centers(0)
    if constants.contact_tilt and material.any():
        x0, x1 = xs[material].min(), xs[material].max()
        u = (xs - 0.5 * (x0 + x1)) / max(x1 - x0, grid.pitch)
        col = amb + excess * (1.0 + constants.contact_tilt * u)
    else:
        col = np.full(xs.shape, scenario.contact_temp)
    return np.broadcast_to(col[:, None, None], (grid.cells.shape[0], grid.cells.shape[1], 1)).copy()


def simulate_reading(grid: VoxelGrid, spec: EmbedSpec, scenario: ThermalScenario,
                     constants=DEFAULT_CONSTANTS) -> ThermalRecording:
    """Press a heat source on the top face, release it and film the top face.

    Frames are taken at k / frame_rate; frames before ``contact_duration``
    show the contact surface.
    """
    scenario.validate()
    if Mode(spec.mode) is Mode.SURFACE_FILL:
        warnings.warn("thermal reading expects a surface-join print", stacklevel=2)
    if not np.any(grid.cells == OBJECT):
        raise SpecViolation("grid holds no object voxels")
    n_bin = _bin_factor(grid.pitch, constants)
    props = material_grid(grid, spec, constants)
    amb = scenario.ambient_temp
    solver = HeatSolver(props, grid.pitch, h=constants.h_conv, ambient=amb,
                        h_exponent=constants.h_exponent, h_ref_dt=constants.h_ref_dt)
    source = contact_field(grid, scenario, constants)
    excess = float(np.max(np.abs(source - amb)))
    dt_cap = min(solver.dt_max, constants.dt_safety * min(solver.dt_stable(True, excess),
                                                          solver.dt_stable(False, excess)))

    times = frame_times(scenario)
    t_release = scenario.contact_duration
    events = np.unique(np.concatenate([times, [t_release]]))
    T = np.full(grid.cells.shape, float(amb))
    frames = []
    t = 0.0
    fi = 0
    for t_next in events:
        span = t_next - t
        if span > 1e-12:
            n = max(1, math.ceil(span / dt_cap - 1e-9))
            dt = span / n
            contact = source if t < t_release - 1e-9 else None
            for _ in range(n):
                T = T + dt * solver.rate(T, contact)
            t = t_next
        while fi < len(times) and abs(times[fi] - t) < 1e-9:
            contact = source if t < t_release - 1e-9 else None
            surf = solver.surface_temperature(T, contact)
            img = _camera_view(surf, amb, grid.pitch, constants)
            img = img + _frame_noise(scenario.seed, fi, img.shape, scenario.noise_sigma)
            frames.append(img)
            fi += 1
    info_cols = (grid.cells == INFO).any(axis=2)
    m = int(round(constants.camera_margin_mm / grid.pitch))
    info_mask = _bin(np.pad(info_cols, m).astype(float), n_bin, 0.0).T >= 0.5
    ix, iy = np.nonzero(info_cols)
    rect = np.zeros(info_cols.shape)
    if len(ix):
        rect[ix.min():ix.max() + 1, iy.min():iy.max() + 1] = 1.0
    footprint_mask = _bin(np.pad(rect, m), n_bin, 0.0).T >= 0.5
    return ThermalRecording(times, np.array(frames), contact_end=t_release,
                            info_mask=info_mask, footprint_mask=footprint_mask)


def pattern_contrast(frame, info_mask, region_mask=None):
    """Mean surface temperature over info pixels minus the mean over the
    other pixels of ``region_mask`` (default: the whole frame). Signed."""
    frame = np.asarray(frame)
    if region_mask is None:
        region_mask = np.ones(frame.shape, dtype=bool)
    rest = region_mask & ~info_mask
    return float(frame[info_mask].mean() - frame[rest].mean())


# ---------------------------------------------------------------------- CSV


def write_thermal_csv(rec: ThermalRecording, path):
    n, rows, cols = rec.frames.shape
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(f"rows,{rows},cols,{cols}\n")
        for i in range(n):
            if i:
                fh.write("\n")
            fh.write(f"t,{rec.times[i]:.3f}\n")
            for row in rec.frames[i]:
                fh.write(",".join(f"{v:.3f}" for v in row) + "\n")


def read_thermal_csv(path) -> ThermalRecording:
    with open(path, encoding="ascii", errors="replace") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise FormatError("empty file", 1)
    head = lines[0].split(",")
    if len(head) != 4 or head[0] != "rows" or head[2] != "cols":
        raise FormatError("header must be 'rows,<R>,cols,<C>'", 1)
    try:
        rows, cols = int(head[1]), int(head[3])
    except ValueError:
        raise FormatError("header dimensions must be integers", 1) from None
    if rows <= 0 or cols <= 0:
        raise FormatError("header dimensions must be positive", 1)

    times, frames = [], []
    i = 1
    while i < len(lines):
        lineno = i + 1
        line = lines[i]
        if not line.startswith("t,"):
            raise FormatError(f"expected 't,<seconds>', found {line[:40]!r}", lineno)
        try:
            t = float(line[2:])
        except ValueError:
            raise FormatError(f"bad timestamp {line[2:]!r}", lineno) from None
        if not math.isfinite(t):
            raise FormatError("non-finite timestamp", lineno)
        if times and t <= times[-1]:
            raise FormatError(f"timestamp {t} does not increase (previous {times[-1]})", lineno)
        block = lines[i + 1:i + 1 + rows]
        if len(block) < rows or any(b == "" for b in block):
            raise FormatError(f"frame at t={t} has fewer than {rows} rows", lineno)
        grid = np.empty((rows, cols))
        for r, text in enumerate(block):
            vals = text.split(",")
            if len(vals) != cols:
                raise FormatError(f"expected {cols} values, found {len(vals)}", lineno + 1 + r)
            try:
                grid[r] = [float(v) for v in vals]
            except ValueError:
                raise FormatError("non-numeric temperature", lineno + 1 + r) from None
            if not np.all(np.isfinite(grid[r])):
                raise FormatError("non-finite temperature", lineno + 1 + r)
        times.append(t)
        frames.append(grid)
        i += 1 + rows
        if i < len(lines):
            if lines[i] != "":
                raise FormatError("frames must be separated by one blank line", i + 1)
            i += 1
            if i >= len(lines):
                raise FormatError("trailing blank line without a frame", i)
    if not frames:
        raise FormatError("file holds no frames", len(lines))
    return ThermalRecording(np.array(times), np.array(frames))
