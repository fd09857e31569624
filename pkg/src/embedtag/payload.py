"""Payloads: binary matrices and monochrome glyph bitmaps, and their
extrusion into information meshes."""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import BadMagic, DimensionMismatch, FormatError, OnesOutOfRange, SpecViolation
from .geometry import EmbedSpec, TriMesh, box_mesh


@dataclass
class BitMatrix:
    bits: np.ndarray

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool)
        if self.bits.ndim != 2 or 0 in self.bits.shape:
            raise ValueError(f"bit matrix must be 2D and non-empty, got shape {self.bits.shape}")

    @property
    def rows(self):
        return self.bits.shape[0]

    @property
    def cols(self):
        return self.bits.shape[1]

    @property
    def shape(self):
        return self.bits.shape

    def popcount(self):
        return int(self.bits.sum())

    def check_payload(self):
        """Raise unless this matrix is embeddable (anchor set, some zero)."""
        if not self.bits[0, 0]:
            raise SpecViolation("anchor bit (0, 0) must be 1")
        if self.bits.all():
            raise SpecViolation("an all-ones matrix has no contrast reference")
        return self

    def to_text(self):
        return "\n".join("".join("1" if b else "0" for b in row) for row in self.bits) + "\n"

    def __eq__(self, other):
        return isinstance(other, BitMatrix) and np.array_equal(self.bits, other.bits)


def random_matrix(rows, cols, ones, seed) -> BitMatrix:
    """Random payload with exactly ``ones`` set bits, the anchor included."""
    n = rows * cols
    if not 1 <= ones <= n - 1:
        raise OnesOutOfRange(f"ones must be in [1, {n - 1}] for a {rows}x{cols} matrix, got {ones}")
    rng = np.random.default_rng(seed)
    flat = np.zeros(n, dtype=bool)
    flat[0] = True
    flat[1 + rng.choice(n - 1, size=ones - 1, replace=False)] = True
    return BitMatrix(flat.reshape(rows, cols))


def read_matrix(text) -> BitMatrix:
    """Parse the matrix file format: one row per line, characters 0/1."""
    if isinstance(text, bytes):
        text = text.decode("ascii", errors="replace")
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if set(line) - {"0", "1"}:
            raise FormatError(f"matrix rows may only contain 0 and 1, got {line!r}", lineno)
        if rows and len(line) != len(rows[0]):
            raise FormatError(f"row has {len(line)} columns, expected {len(rows[0])}", lineno)
        rows.append([c == "1" for c in line])
    if not rows:
        raise FormatError("matrix file is empty", 1)
    return BitMatrix(np.array(rows, dtype=bool))


def matrix_to_mesh(m: BitMatrix, spec: EmbedSpec) -> TriMesh:
    """One X x X x info_height cuboid per set bit; row r spans y in
    [r*X, (r+1)*X], column c spans x in [c*X, (c+1)*X]."""
    spec.validate()
    if tuple(m.shape) != tuple(spec.payload_shape):
        raise SpecViolation(f"matrix shape {m.shape} differs from spec payload shape {spec.payload_shape}")
    X, h = spec.density_X, spec.info_height
    return TriMesh.concat(
        box_mesh((c * X, r * X, 0.0), ((c + 1) * X, (r + 1) * X, h))
        for r, c in zip(*np.nonzero(m.bits))
    )


def matrix_accuracy(decoded: BitMatrix, truth: BitMatrix) -> float:
    if decoded.shape != truth.shape:
        raise DimensionMismatch(f"decoded shape {decoded.shape} vs truth {truth.shape}")
    return float(np.mean(decoded.bits == truth.bits))


# --------------------------------------------------------------------- glyphs


@dataclass
class GlyphBitmap:
    pixels: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=bool)
        if self.pixels.ndim != 2 or 0 in self.pixels.shape:
            raise ValueError("glyph must be a non-empty 2D bitmap")
        if not self.pixels.any():
            raise ValueError("glyph has no set pixels")

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def height(self):
        return self.pixels.shape[0]

    def __eq__(self, other):
        return (isinstance(other, GlyphBitmap) and self.scale == other.scale
                and np.array_equal(self.pixels, other.pixels))


_COMMENT = re.compile(rb"#[^\n]*")


def _header_fields(data, start, count):
    """Read ``count`` integer header fields; returns them and the offset just
    past the last digit."""
    values = []
    pos = start
    while len(values) < count:
        while pos < len(data) and (data[pos:pos + 1].isspace() or data[pos:pos + 1] == b"#"):
            if data[pos:pos + 1] == b"#":
                m = _COMMENT.match(data, pos)
                pos = m.end()
            else:
                pos += 1
        end = pos
        while end < len(data) and data[end:end + 1].isdigit():
            end += 1
        if end == pos:
            raise DimensionMismatch("PBM header is missing width/height")
        values.append(int(data[pos:end]))
        pos = end
    return values, pos


def load_pbm(data: bytes, scale=1.0) -> GlyphBitmap:
    """Load a P1 (plain) or P4 (raw) portable bitmap; 1 = set pixel."""
    magic = data[:2]
    if magic not in (b"P1", b"P4"):
        raise BadMagic(f"expected P1 or P4 magic, got {magic!r}")
    (width, height), pos = _header_fields(data, 2, 2)
    if width <= 0 or height <= 0:
        raise DimensionMismatch(f"bad PBM size {width}x{height}")
    if magic == b"P1":
        body = _COMMENT.sub(b"", data[pos:])
        digits = [c for c in body.decode("ascii", errors="replace") if not c.isspace()]
        if set(digits) - {"0", "1"}:
            raise DimensionMismatch("P1 raster may only contain 0 and 1")
        if len(digits) != width * height:
            raise DimensionMismatch(f"P1 raster has {len(digits)} pixels, expected {width * height}")
        pixels = np.array([d == "1" for d in digits], dtype=bool).reshape(height, width)
    else:
        pos += 1  # single whitespace byte before the raster
        stride = (width + 7) // 8
        raster = data[pos:pos + stride * height]
        if len(raster) != stride * height:
            raise DimensionMismatch(f"P4 raster has {len(raster)} bytes, expected {stride * height}")
        packed = np.frombuffer(raster, dtype=np.uint8).reshape(height, stride)
        pixels = np.unpackbits(packed, axis=1)[:, :width].astype(bool)
    return GlyphBitmap(pixels, scale)


def write_pbm(g: GlyphBitmap, plain=False) -> bytes:
    if plain:
        rows = [" ".join("1" if p else "0" for p in row) for row in g.pixels]
        return (f"P1\n{g.width} {g.height}\n" + "\n".join(rows) + "\n").encode("ascii")
    packed = np.packbits(g.pixels, axis=1)
    return f"P4\n{g.width} {g.height}\n".encode("ascii") + packed.tobytes()


def bitmap_to_mesh(g: GlyphBitmap, info_height) -> TriMesh:
    s = g.scale
    return TriMesh.concat(
        box_mesh((c * s, r * s, 0.0), ((c + 1) * s, (r + 1) * s, info_height))
        for r, c in zip(*np.nonzero(g.pixels))
    )
