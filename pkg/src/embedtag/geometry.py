"""Triangle meshes, voxel grids and the boolean embedding of an information
body into an object body.

Booleans are done on voxels: each body is voxelized with a parity ray cast
and the label arrays are combined. The exported object body is the outer
shell plus the inverted info shell, which is an exact mesh difference as
long as the info body sits strictly inside the object.
"""

from __future__ import annotations

import enum
import json
import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptyMesh,
    InfoProtrudes,
    IoFailure,
    MalformedSyntax,
    ModeInapplicable,
    NonFiniteVertex,
    OpenMesh,
    PitchTooCoarse,
    SpecViolation,
    TruncatedFile,
)

EMPTY, OBJECT, INFO = 0, 1, 2
LABEL_NAMES = {EMPTY: "empty", OBJECT: "object", INFO: "info"}

MANIFEST_SCHEMA_VERSION = 1
DEFAULT_PITCH_MM = 0.2

_BINARY_HEADER = b"embedtag binary STL".ljust(80, b"\0")
_RECORD = struct.Struct("<12fH")


class Mode(str, enum.Enum):
    SURFACE_JOIN = "surface-join"
    SURFACE_FILL = "surface-fill"


@dataclass
class TriMesh:
    """Triangle soup in millimetres, ``triangles`` has shape (n, 3, 3)."""

    triangles: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        tris = np.asarray(self.triangles, dtype=np.float64)
        if tris.size == 0:
            tris = tris.reshape(0, 3, 3)
        if tris.ndim != 3 or tris.shape[1:] != (3, 3):
            raise ValueError(f"triangles must have shape (n, 3, 3), got {tris.shape}")
        if not np.all(np.isfinite(tris)):
            raise NonFiniteVertex("mesh contains a non-finite vertex coordinate")
        self.triangles = tris
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)

    def __len__(self):
        return len(self.triangles)

    @property
    def is_empty(self):
        return len(self.triangles) == 0

    def bbox(self):
        if self.is_empty:
            raise EmptyMesh("empty mesh has no bounding box")
        pts = self.triangles.reshape(-1, 3)
        return pts.min(axis=0), pts.max(axis=0)

    def translated(self, offset):
        return TriMesh(self.triangles + np.asarray(offset, dtype=np.float64))

    def flipped(self):
        """Same surface with reversed winding (inward-facing normals)."""
        return TriMesh(self.triangles[:, ::-1, :].copy())

    def face_normals(self):
        t = self.triangles
        n = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
        norm = np.linalg.norm(n, axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            n = np.where(norm > 0, n / norm, 0.0)
        return n

    def signed_volume(self):
        t = self.triangles
        return float(np.einsum("ij,ij->i", t[:, 0], np.cross(t[:, 1], t[:, 2])).sum() / 6.0)

    @classmethod
    def concat(cls, meshes):
        parts = [m.triangles for m in meshes if not m.is_empty]
        if not parts:
            return cls(np.zeros((0, 3, 3)))
        return cls(np.concatenate(parts))


def box_mesh(lo, hi):
    """Closed axis-aligned cuboid, 12 triangles wound counter-clockwise
    seen from outside."""
    x0, y0, z0 = (float(v) for v in lo)
    x1, y1, z1 = (float(v) for v in hi)
    v = np.array([
        [x0, y0, z0], [x1, y0, z0], [x1, y1, z0], [x0, y1, z0],
        [x0, y0, z1], [x1, y0, z1], [x1, y1, z1], [x0, y1, z1],
    ])
    faces = [
        (0, 2, 1), (0, 3, 2),  # bottom
        (4, 5, 6), (4, 6, 7),  # top
        (0, 1, 5), (0, 5, 4),  # front (y0)
        (2, 3, 7), (2, 7, 6),  # back (y1)
        (1, 2, 6), (1, 6, 5),  # right (x1)
        (3, 0, 4), (3, 4, 7),  # left (x0)
    ]
    return TriMesh(v[np.array(faces)])


def icosphere(radius, subdivisions=3, center=(0.0, 0.0, 0.0)):
    t = (1.0 + math.sqrt(5.0)) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    verts = [np.array(v, dtype=float) / np.linalg.norm(v) for v in verts]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    for _ in range(subdivisions):
        cache = {}

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    v = np.array(verts) * radius + np.asarray(center, dtype=float)
    return TriMesh(v[np.array(faces)])


# --------------------------------------------------------------------- STL


def parse_stl(data: bytes) -> TriMesh:
    """Parse an ASCII or binary STL byte stream."""
    if isinstance(data, str):
        data = data.encode("ascii")
    binary_len = None
    if len(data) >= 84:
        (count,) = struct.unpack_from("<I", data, 80)
        binary_len = 84 + 50 * count
    # binary headers may also start with "solid"; a consistent length wins
    if data.lstrip()[:5].lower() == b"solid" and len(data) != binary_len:
        return _parse_ascii(data.decode("ascii", errors="replace"))
    return _parse_binary(data)


def _parse_binary(data):
    if len(data) < 84:
        raise TruncatedFile(f"binary STL needs at least 84 bytes, got {len(data)}")
    (count,) = struct.unpack_from("<I", data, 80)
    need = 84 + 50 * count
    if len(data) < need:
        raise TruncatedFile(
            f"header declares {count} triangles ({need} bytes) but stream has {len(data)} bytes"
        )
    rec = np.frombuffer(
        data,
        dtype=np.dtype([("n", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")]),
        count=count,
        offset=84,
    )
    tris = rec["v"].astype(np.float64)
    if not np.all(np.isfinite(tris)):
        bad = int(np.nonzero(~np.isfinite(tris).all(axis=(1, 2)))[0][0])
        raise NonFiniteVertex(f"triangle {bad} has a non-finite vertex")
    return TriMesh(tris, normals=rec["n"].astype(np.float64))


def _tokens(text):
    for lineno, line in enumerate(text.splitlines(), start=1):
        for tok in line.split():
            yield tok, lineno


def _parse_ascii(text):
    toks = list(_tokens(text))
    pos = 0
    end_line = toks[-1][1] if toks else 1

    def take(expected=None):
        nonlocal pos
        if pos >= len(toks):
            raise MalformedSyntax(f"unexpected end of file, expected {expected!r}", end_line)
        tok, line = toks[pos]
        if expected is not None and tok.lower() != expected:
            raise MalformedSyntax(f"expected {expected!r}, found {tok!r}", line)
        pos += 1
        return tok, line

    def number():
        tok, line = take()
        try:
            value = float(tok)
        except ValueError:
            raise MalformedSyntax(f"expected a number, found {tok!r}", line) from None
        if not math.isfinite(value):
            raise NonFiniteVertex(f"non-finite coordinate {tok!r}", line)
        return value

    _, solid_line = take("solid")
    # solid name: rest of the header line
    while pos < len(toks) and toks[pos][1] == solid_line:
        pos += 1

    tris, normals = [], []
    while True:
        if pos >= len(toks):
            raise MalformedSyntax("missing 'endsolid'", end_line)
        tok, line = toks[pos]
        low = tok.lower()
        if low == "endsolid":
            break
        if low != "facet":
            raise MalformedSyntax(f"expected 'facet' or 'endsolid', found {tok!r}", line)
        pos += 1
        take("normal")
        normals.append([number(), number(), number()])
        take("outer")
        take("loop")
        tri = []
        for _ in range(3):
            take("vertex")
            tri.append([number(), number(), number()])
        take("endloop")
        take("endfacet")
        tris.append(tri)
    return TriMesh(np.array(tris, dtype=np.float64).reshape(-1, 3, 3),
                   normals=np.array(normals, dtype=np.float64).reshape(-1, 3))


def write_stl(mesh: TriMesh, format="binary", name="embedtag") -> bytes:
    if mesh.is_empty:
        raise EmptyMesh("cannot write an empty mesh")
    normals = mesh.face_normals()
    if format == "binary":
        out = bytearray(_BINARY_HEADER)
        out += struct.pack("<I", len(mesh))
        rec = np.zeros(
            len(mesh),
            dtype=np.dtype([("n", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")]),
        )
        rec["n"] = normals
        rec["v"] = mesh.triangles
        out += rec.tobytes()
        return bytes(out)
    if format == "ascii":
        lines = [f"solid {name}"]
        for n, tri in zip(normals, mesh.triangles):
            lines.append(f"  facet normal {n[0]:.9e} {n[1]:.9e} {n[2]:.9e}")
            lines.append("    outer loop")
            for v in tri:
                lines.append(f"      vertex {v[0]:.9e} {v[1]:.9e} {v[2]:.9e}")
            lines.append("    endloop")
            lines.append("  endfacet")
        lines.append(f"endsolid {name}")
        return ("\n".join(lines) + "\n").encode("ascii")
    raise ValueError(f"unknown STL format {format!r}")


# -------------------------------------------------------------------- voxels


@dataclass
class VoxelGrid:
    """Labelled voxel grid. ``cells[i, j, k]`` is the voxel whose centre is
    ``origin + (i + 0.5, j + 0.5, k + 0.5) * pitch``.

    ``solid`` marks voxels printed fully dense (joined or filled surface
    layers); it is ``None`` until a fabrication mode has been applied.
    """

    origin: np.ndarray
    pitch: float
    cells: np.ndarray
    solid: np.ndarray | None = None

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64)
        if not self.pitch > 0:
            raise ValueError("pitch must be positive")
        self.cells = np.asarray(self.cells, dtype=np.uint8)
        if self.cells.ndim != 3:
            raise ValueError("cells must be a 3D array")
        if np.any(self.cells > INFO):
            raise ValueError("cells hold labels outside {empty, object, info}")

    @property
    def dims(self):
        return tuple(int(n) for n in self.cells.shape)

    def count(self, label):
        return int(np.count_nonzero(self.cells == label))

    def centers(self, axis):
        return self.origin[axis] + (np.arange(self.cells.shape[axis]) + 0.5) * self.pitch

    def copy(self):
        return VoxelGrid(self.origin.copy(), self.pitch, self.cells.copy(),
                         None if self.solid is None else self.solid.copy())


def grid_frame(lo, hi, pitch):
    """Origin and dims of a grid covering [lo, hi] padded by one voxel."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    n = np.ceil((hi - lo) / pitch - 1e-9).astype(int) + 2
    return lo - pitch, tuple(int(v) for v in n)


def _axis_parity(tris, origin, pitch, dims, axis):
    """Parity of ray crossings along +axis from every voxel centre.

    Ties on shared edges follow a top-left rule so a ray through an edge is
    counted for exactly one of the two triangles.
    """
    b, c = [a for a in range(3) if a != axis]
    na, nb, nc = dims[axis], dims[b], dims[c]
    cb = origin[b] + (np.arange(nb) + 0.5) * pitch
    cc = origin[c] + (np.arange(nc) + 0.5) * pitch
    diff = np.zeros((na + 1, nb, nc), dtype=np.int32)
    p2 = tris[:, :, [b, c]]
    pa = tris[:, :, axis]
    area = ((p2[:, 1, 0] - p2[:, 0, 0]) * (p2[:, 2, 1] - p2[:, 0, 1])
            - (p2[:, 1, 1] - p2[:, 0, 1]) * (p2[:, 2, 0] - p2[:, 0, 0]))
    for t in np.nonzero(np.abs(area) > 1e-15)[0]:
        P = p2[t]
        A = pa[t]
        if area[t] < 0:
            P = P[[0, 2, 1]]
            A = A[[0, 2, 1]]
        lo = P.min(axis=0)
        hi = P.max(axis=0)
        j0 = max(int(np.ceil((lo[0] - origin[b]) / pitch - 0.5)), 0)
        j1 = min(int(np.floor((hi[0] - origin[b]) / pitch - 0.5)), nb - 1)
        k0 = max(int(np.ceil((lo[1] - origin[c]) / pitch - 0.5)), 0)
        k1 = min(int(np.floor((hi[1] - origin[c]) / pitch - 0.5)), nc - 1)
        if j1 < j0 or k1 < k0:
            continue
        qb, qc = np.meshgrid(cb[j0:j1 + 1], cc[k0:k1 + 1], indexing="ij")
        inside = np.ones(qb.shape, dtype=bool)
        weights = []
        for e in range(3):
            s, d = P[e], P[(e + 1) % 3]
            ex, ey = d[0] - s[0], d[1] - s[1]
            # evaluate from the lexicographically smaller endpoint so the two
            # triangles sharing this edge get exactly opposite values
            if (s[0], s[1]) <= (d[0], d[1]):
                f = ex * (qc - s[1]) - ey * (qb - s[0])
            else:
                f = -((s[0] - d[0]) * (qc - d[1]) - (s[1] - d[1]) * (qb - d[0]))
            top_left = ey < 0 or (ey == 0 and ex > 0)
            inside &= (f > 0) | ((f == 0) & top_left)
            weights.append(f)
        if not inside.any():
            continue
        tot = abs(area[t])
        # weight of vertex v is the edge function of the opposite edge
        hit = (weights[1] * A[0] + weights[2] * A[1] + weights[0] * A[2]) / tot
        jj, kk = np.nonzero(inside)
        u = (hit[inside] - origin[axis]) / pitch - 0.5
        n = np.clip(np.ceil(u), 0, na).astype(int)
        np.add.at(diff, (np.zeros_like(n), jj + j0, kk + k0), 1)
        np.add.at(diff, (n, jj + j0, kk + k0), -1)
    counts = np.cumsum(diff[:-1], axis=0)
    parity = (counts % 2).astype(bool)
    return np.moveaxis(parity, 0, axis)


def voxelize(mesh: TriMesh, pitch: float, label=OBJECT, like: VoxelGrid | None = None,
             check_closed=True) -> VoxelGrid:
    """Label every voxel whose centre lies inside ``mesh``.

    With ``like`` the result shares that grid's frame; otherwise the grid
    covers the mesh bounding box padded by one voxel.
    """
    if mesh.is_empty:
        raise EmptyMesh("cannot voxelize an empty mesh")
    if not pitch > 0:
        raise PitchTooCoarse("pitch must be positive")
    lo, hi = mesh.bbox()
    if np.any((hi - lo) / pitch < 2):
        raise PitchTooCoarse(
            f"pitch {pitch} gives fewer than 2 voxels along a mesh axis (extent {hi - lo})"
        )
    if like is not None:
        origin, dims = like.origin, like.dims
        pitch = like.pitch
    else:
        origin, dims = grid_frame(lo, hi, pitch)
    votes = [_axis_parity(mesh.triangles, origin, pitch, dims, a) for a in range(3)]
    total = votes[0].astype(np.int8) + votes[1] + votes[2]
    inside = total >= 2
    if check_closed:
        disagree = np.count_nonzero((total > 0) & (total < 3))
        if disagree > 0.001 * inside.size:
            raise OpenMesh(
                f"parity disagrees across ray directions for {disagree} of {inside.size} voxels"
            )
    cells = np.where(inside, np.uint8(label), np.uint8(EMPTY))
    return VoxelGrid(origin, pitch, cells)


# ---------------------------------------------------------------- embedding


@dataclass
class EmbedSpec:
    depth_d: float = 1.0
    density_X: float = 5.0
    info_height: float = 1.0
    mode: Mode = Mode.SURFACE_JOIN
    infill_fraction: float = 0.10
    object_dims: tuple = (30.0, 30.0, 15.0)
    object_color: str = "black"
    info_color: str = "white"
    payload_shape: tuple = (4, 4)

    def __post_init__(self):
        self.mode = Mode(self.mode)
        self.object_dims = tuple(float(v) for v in self.object_dims)
        self.payload_shape = tuple(int(v) for v in self.payload_shape)

    def validate(self):
        W, D, H = self.object_dims
        rows, cols = self.payload_shape
        problems = []
        if not self.depth_d >= 0:
            problems.append(f"depth_d must be >= 0, got {self.depth_d}")
        if not self.density_X > 0:
            problems.append(f"density_X must be > 0, got {self.density_X}")
        if not self.info_height > 0:
            problems.append(f"info_height must be > 0, got {self.info_height}")
        if not 0 < self.infill_fraction <= 1:
            problems.append(f"infill_fraction must be in (0, 1], got {self.infill_fraction}")
        if min(W, D, H) <= 0:
            problems.append(f"object dims must be positive, got {self.object_dims}")
        if rows < 1 or cols < 1:
            problems.append(f"payload shape must be positive, got {self.payload_shape}")
        if not self.depth_d + self.info_height < H:
            problems.append(f"depth_d + info_height = {self.depth_d + self.info_height} >= H = {H}")
        if self.density_X * cols > W or self.density_X * rows > D:
            problems.append(
                f"payload footprint {self.density_X * cols} x {self.density_X * rows} mm "
                f"exceeds object {W} x {D} mm"
            )
        if problems:
            raise SpecViolation("; ".join(problems))
        return self

    def footprint(self):
        rows, cols = self.payload_shape
        return cols * self.density_X, rows * self.density_X


@dataclass
class BodySet:
    object_body: TriMesh
    info_body: TriMesh
    manifest: dict = field(default_factory=dict)


def place_info(info: TriMesh, obj: TriMesh, spec: EmbedSpec, footprint=None) -> TriMesh:
    """Translate ``info`` (authored with its nominal footprint corner at the
    local origin) so it is centred in X/Y and its top is ``depth_d`` below
    the object's top face."""
    lo, hi = obj.bbox()
    if footprint is None:
        footprint = spec.footprint()
    _, ihi = info.bbox()
    fx, fy = footprint
    offset = np.array([
        lo[0] + (hi[0] - lo[0] - fx) / 2.0,
        lo[1] + (hi[1] - lo[1] - fy) / 2.0,
        hi[2] - spec.depth_d - ihi[2],
    ])
    return info.translated(offset)


def embed(obj: TriMesh, info: TriMesh, spec: EmbedSpec, pitch=DEFAULT_PITCH_MM, place=False):
    """Carve ``info`` out of ``obj`` and return the labelled grid plus the
    two bodies to export. ``info`` must already be placed unless ``place``."""
    spec.validate()
    if obj.is_empty or info.is_empty:
        raise EmptyMesh("object and info bodies must be non-empty")
    olo, ohi = obj.bbox()
    dims = ohi - olo
    if np.any(np.abs(dims - np.array(spec.object_dims)) > 1e-3):
        raise SpecViolation(f"object bbox {tuple(dims)} does not match object_dims {spec.object_dims}")
    if place:
        info = place_info(info, obj, spec)
    ilo, ihi = info.bbox()
    if np.any(ilo <= olo) or np.any(ihi >= ohi):
        raise InfoProtrudes(f"info bbox {ilo}..{ihi} is not strictly inside object bbox {olo}..{ohi}")
    expected_top = ohi[2] - spec.depth_d
    if abs(ihi[2] - expected_top) > 1e-6:
        raise SpecViolation(
            f"info top at z={ihi[2]:.6f} but depth_d={spec.depth_d} puts it at z={expected_top:.6f}"
        )
    outer = voxelize(obj, pitch, OBJECT)
    inner = voxelize(info, pitch, INFO, like=outer)
    cells = outer.cells.copy()
    cells[inner.cells == INFO] = INFO
    grid = VoxelGrid(outer.origin, outer.pitch, cells)
    bodies = BodySet(
        object_body=TriMesh.concat([obj, info.flipped()]),
        info_body=info,
        manifest=build_manifest(spec, pitch),
    )
    return grid, bodies


def apply_mode(grid: VoxelGrid, spec: EmbedSpec, join_reach_mm=None) -> VoxelGrid:
    """Mark the dense print region for the fabrication mode.

    surface-join: every voxel above an Info voxel, up to the object's top
    surface, becomes solid Object. surface-fill: every Object voxel above
    the info top plane becomes solid, across the whole footprint.

    ``join_reach_mm`` caps how far the surface-join bridge grows up from the
    info top (a slicer thickens skins by a bounded amount); None means the
    bridge always reaches the surface.
    """
    info = grid.cells == INFO
    if not info.any():
        raise ModeInapplicable("grid has no Info voxels")
    out = grid.copy()
    nz = grid.cells.shape[2]
    k = np.arange(nz)
    solid = np.zeros(grid.cells.shape, dtype=bool) if out.solid is None else out.solid.copy()
    material = grid.cells != EMPTY
    if Mode(spec.mode) is Mode.SURFACE_JOIN:
        has_info = info.any(axis=2)
        top_info = np.where(has_info, nz - 1 - np.argmax(info[:, :, ::-1], axis=2), nz)
        above = k[None, None, :] > top_info[:, :, None]
        if join_reach_mm is not None:
            reach = int(round(join_reach_mm / grid.pitch))
            above &= k[None, None, :] <= top_info[:, :, None] + reach
        region = above & has_info[:, :, None] & material
    else:
        top_info = int(np.nonzero(info.any(axis=(0, 1)))[0].max())
        region = (k > top_info)[None, None, :] & material
    out.cells[region] = OBJECT
    solid |= region | info
    out.solid = solid
    return out


def build_manifest(spec: EmbedSpec, pitch, object_file="object.stl", info_file="info.stl"):
    rows, cols = spec.payload_shape
    return {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "object_file": object_file,
        "info_file": info_file,
        "depth_d_mm": spec.depth_d,
        "density_X_mm_per_px": spec.density_X,
        "info_height_mm": spec.info_height,
        "mode": Mode(spec.mode).value,
        "infill_fraction": spec.infill_fraction,
        "object_dims_mm": list(spec.object_dims),
        "object_color": spec.object_color,
        "info_color": spec.info_color,
        "pitch_mm": pitch,
        "payload_rows": rows,
        "payload_cols": cols,
    }


def spec_from_manifest(manifest) -> EmbedSpec:
    return EmbedSpec(
        depth_d=manifest["depth_d_mm"],
        density_X=manifest["density_X_mm_per_px"],
        info_height=manifest["info_height_mm"],
        mode=manifest["mode"],
        infill_fraction=manifest["infill_fraction"],
        object_dims=manifest["object_dims_mm"],
        object_color=manifest["object_color"],
        info_color=manifest["info_color"],
        payload_shape=(manifest.get("payload_rows", 4), manifest.get("payload_cols", 4)),
    )


def export_bodies(bodies: BodySet, directory) -> str:
    """Write object.stl, info.stl and manifest.json; returns the manifest path."""
    manifest = dict(bodies.manifest)
    manifest.setdefault("object_file", "object.stl")
    manifest.setdefault("info_file", "info.stl")
    try:
        os.makedirs(directory, exist_ok=True)
        with open(os.path.join(directory, manifest["object_file"]), "wb") as fh:
            fh.write(write_stl(bodies.object_body))
        with open(os.path.join(directory, manifest["info_file"]), "wb") as fh:
            fh.write(write_stl(bodies.info_body))
        path = os.path.join(directory, "manifest.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise IoFailure(f"cannot export bodies to {directory}: {exc}") from exc
    return path


def load_design(directory):
    """Read an exported design back: (object_body, info_body, spec, manifest)."""
    try:
        with open(os.path.join(directory, "manifest.json"), encoding="utf-8") as fh:
            manifest = json.load(fh)
        with open(os.path.join(directory, manifest["object_file"]), "rb") as fh:
            obj = parse_stl(fh.read())
        with open(os.path.join(directory, manifest["info_file"]), "rb") as fh:
            info = parse_stl(fh.read())
    except OSError as exc:
        raise IoFailure(f"cannot read design from {directory}: {exc}") from exc
    except (KeyError, json.JSONDecodeError) as exc:
        raise MalformedSyntax(f"bad manifest in {directory}: {exc}") from exc
    return obj, info, spec_from_manifest(manifest), manifest


def design_grid(obj: TriMesh, info: TriMesh, spec: EmbedSpec, pitch, join_reach_mm=None) -> VoxelGrid:
    """Voxelize an exported body pair and apply the fabrication mode."""
    outer = voxelize(obj, pitch, OBJECT)
    inner = voxelize(info, pitch, INFO, like=outer)
    if np.any((outer.cells == OBJECT) & (inner.cells == INFO)):
        raise SpecViolation("exported bodies overlap")
    cells = outer.cells.copy()
    cells[inner.cells == INFO] = INFO
    return apply_mode(VoxelGrid(outer.origin, outer.pitch, cells), spec, join_reach_mm)
