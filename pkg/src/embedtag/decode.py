"""Decoders for thermal recordings and NIR cubes, plus accuracy series and
the reading-window metric."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import imaging
from .errors import (DecodeError, DegenerateHistogram, EmbedTagError, EmptyRecording,
                     FormatError, NoAnchorContour, NoContours, NoObjectContour)
from .payload import BitMatrix, matrix_accuracy

POLARITIES = ("auto", "hot", "cold")
MIN_OBJECT_FILL = 0.5
MIN_OBJECT_FRAC = 0.2  # of the frame area


@dataclass
class GridGeometry:
    """Where to sample the payload lattice inside the cropped object.

    ``sample_spacing`` is in pixels of the image being sampled. When it is
    None it is derived from the print geometry as
    ``density_X * crop_width / object_width_mm``.

    ``polarity`` picks which side of the payload threshold counts as a set
    bit: "hot" (brighter), "cold" (darker) or "auto". Under "auto" set bits
    lean toward the background level: solid columns drain a heated skin
    faster than infill does, so they show colder than the rest of a warmed
    object and warmer than the rest of a chilled one. ``min_area_frac`` drops contours smaller
    than that fraction of one lattice cell; ``invert`` flips whatever
    polarity resolves to. The payload threshold is taken
    on the crop minus a ``crop_inset_frac`` border on each side, which keeps
    the blurred object rim out of the histogram.

    With ``orient`` the binarized image is also tried at 90, 180 and 270
    degrees, and the first rotation whose anchor sits at the payload's
    top-left corner wins. Off by default: readers are assumed axis-aligned.
    """

    rows: int = 4
    cols: int = 4
    sample_spacing: float | None = None
    density_X: float = 5.0
    object_width_mm: float = 30.0
    polarity: str = "auto"
    min_area_frac: float = 0.25
    crop_inset_frac: float = 0.1
    invert: bool = False
    orient: bool = False

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("lattice needs at least one row and column")
        if self.sample_spacing is not None and not self.sample_spacing > 0:
            raise ValueError("sample_spacing must be > 0")
        if self.polarity not in POLARITIES:
            raise ValueError(f"polarity must be one of {POLARITIES}")

    def spacing_for(self, crop_width_px, scale=1.0):
        if self.sample_spacing is not None:
            return self.sample_spacing * scale
        return self.density_X * crop_width_px / self.object_width_mm


def _foreground(img_u8, t, polarity, object_hot=True, invert=False):
    hot = img_u8 > t
    if polarity == "auto":
        polarity = "cold" if object_hot else "hot"
    return hot if (polarity == "hot") != invert else ~hot


def anchor_contour(contours, min_area=0.0):
    """Top-left contour: smallest bbox x0 + y0, ties by y0 then x0.

    The corner of the bounding box, not the centroid, is used because the
    anchor cell often merges with set neighbours, which drags the centroid
    away from the anchor cell while leaving the top-left corner in place.
    """
    kept = [c for c in contours if c.area >= min_area]
    if not kept:
        raise NoAnchorContour("no payload contour survived the area filter")
    return min(kept, key=lambda c: (c.bbox[0] + c.bbox[1], c.bbox[1], c.bbox[0]))


def sample_lattice(binary, anchor, spacing, rows, cols):
    """Read rows x cols bits at cell centres of a lattice whose top-left cell
    starts at the anchor contour's bbox corner."""
    x0 = anchor.bbox[0] - 0.5
    y0 = anchor.bbox[1] - 0.5
    h, w = binary.shape
    bits = np.zeros((rows, cols), dtype=bool)
    for r in range(rows):
        for c in range(cols):
            x = int(np.floor(x0 + (c + 0.5) * spacing + 0.5))
            y = int(np.floor(y0 + (r + 0.5) * spacing + 0.5))
            if 0 <= x < w and 0 <= y < h:
                bits[r, c] = bool(binary[y, x])
    return BitMatrix(bits)


def _anchored_at_corner(contours, anchor, bits):
    x0 = min(c.bbox[0] for c in contours)
    y0 = min(c.bbox[1] for c in contours)
    # an empty corner cell can still sit under a diagonal blob's bbox, so
    # the sampled corner bit must be set too
    return anchor.bbox[:2] == (x0, y0) and bool(bits.bits[0, 0])


def sample_payload(binary, spacing, geom: GridGeometry) -> BitMatrix:
    """Anchor on the top-left contour of a binary image and read the lattice,
    searching the four orientations when ``geom.orient`` is set."""
    min_area = geom.min_area_frac * spacing**2
    first = None
    for k in range(4 if geom.orient else 1):
        img = np.rot90(binary, k)
        contours = [c for c in imaging.find_contours(img) if c.area >= min_area]
        anchor = anchor_contour(contours, min_area)
        bits = sample_lattice(img, anchor, spacing, geom.rows, geom.cols)
        if not geom.orient or _anchored_at_corner(contours, anchor, bits):
            return bits
        if first is None:
            first = bits
    return first


def locate_object(frame):
    """Stage one: blur, normalise, Otsu, keep the largest contour. Returns
    the blurred frame, the object contour and whether the object is hotter
    than its surroundings."""
    blurred = imaging.gaussian_blur5(frame)
    u8 = imaging.normalize_u8(blurred)
    try:
        t = imaging.otsu_threshold(u8)
    except DegenerateHistogram:
        raise NoObjectContour("frame has no contrast") from None
    hot = u8 > t
    # the object is whichever class does not own the frame border
    border = np.concatenate([hot[0], hot[-1], hot[:, 0], hot[:, -1]])
    object_hot = bool(border.mean() < 0.5)
    fg = hot if object_hot else ~hot
    h, w = fg.shape
    # a real object sits inside the frame as one solid blob; noise blobs
    # run into the edge or are ragged
    contours = [c for c in imaging.find_contours(fg)
                if c.bbox[0] > 0 and c.bbox[1] > 0 and c.bbox[2] < w - 1 and c.bbox[3] < h - 1]
    if not contours:
        raise NoObjectContour("no object contour clear of the frame edge")
    obj = max(contours, key=lambda c: c.area)
    if obj.area < MIN_OBJECT_FRAC * h * w:
        raise NoObjectContour(f"largest blob covers only {obj.area / (h * w):.2f} of the frame")
    if obj.area < MIN_OBJECT_FILL * obj.width * obj.height:
        raise NoObjectContour(f"largest blob fills only {obj.area / (obj.width * obj.height):.2f} of its box")
    return blurred, obj, object_hot


def decode_thermal_frame(frame, geom: GridGeometry) -> BitMatrix:
    frame = np.asarray(frame, dtype=np.float64)
    blurred, obj, object_hot = locate_object(frame)
    x0, y0, x1, y1 = obj.bbox
    crop = blurred[y0:y1 + 1, x0:x1 + 1]
    spacing = geom.spacing_for(crop.shape[1])
    k = int(round(geom.crop_inset_frac * min(crop.shape)))
    if k and min(crop.shape) > 2 * k + 2:
        inner = crop[k:-k, k:-k]
    else:
        k, inner = 0, crop
    u8 = imaging.normalize_u8(inner)
    try:
        t = imaging.otsu_threshold(u8)
    except DegenerateHistogram:
        raise NoAnchorContour("object crop has no contrast") from None
    fg = _foreground(u8, t, geom.polarity, object_hot, geom.invert)
    full = np.zeros(crop.shape, dtype=bool)
    full[k:crop.shape[0] - k, k:crop.shape[1] - k] = fg
    return sample_payload(full, spacing, geom)


# ------------------------------------------------------------- recordings


@dataclass
class AccuracySeries:
    times: np.ndarray
    accuracy: np.ndarray
    flagged: np.ndarray = field(default=None)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.accuracy = np.asarray(self.accuracy, dtype=np.float64)
        if self.flagged is None:
            self.flagged = np.zeros(len(self.times), dtype=bool)
        self.flagged = np.asarray(self.flagged, dtype=bool)
        if not (len(self.times) == len(self.accuracy) == len(self.flagged)):
            raise ValueError("times, accuracy and flags must have equal length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self):
        return len(self.times)


def flag_outliers(accuracy, q=0.2):
    """Flag values strictly below the q-quantile (linear interpolation)."""
    accuracy = np.asarray(accuracy, dtype=np.float64)
    if len(accuracy) == 0:
        return np.zeros(0, dtype=bool)
    return accuracy < np.quantile(accuracy, q)


def decode_thermal_recording(rec, geom: GridGeometry, truth: BitMatrix, q=0.2) -> AccuracySeries:
    """Decode every frame against ``truth``; frames whose pipeline raises
    score 0."""
    if len(rec.times) == 0:
        raise EmptyRecording("recording has no frames")
    acc = np.empty(len(rec.times))
    for i, frame in enumerate(rec.frames):
        try:
            acc[i] = matrix_accuracy(decode_thermal_frame(frame, geom), truth)
        except (DecodeError, NoContours, DegenerateHistogram, imaging.ImageTooSmall):
            acc[i] = 0.0
    return AccuracySeries(rec.times, acc, flag_outliers(acc, q))


def reading_window(series: AccuracySeries, contact_end=0.0, frame_period=None):
    """Length in seconds of the error-free run that starts at the first
    unflagged frame at or after ``contact_end``. Flagged frames are skipped,
    they neither extend nor break the run.

    The run ends at the timestamp of the frame that breaks it. A run still
    going at the end of the series gets one frame period past its last
    frame (``frame_period``, default the median frame spacing)."""
    t, acc, flag = series.times, series.accuracy, series.flagged
    idx = [i for i in range(len(t)) if t[i] >= contact_end - 1e-9 and not flag[i]]
    if not idx or acc[idx[0]] != 1.0:
        return 0.0
    for i in idx:
        if acc[i] != 1.0:
            return float(t[i] - t[idx[0]])
    if frame_period is None:
        frame_period = float(np.median(np.diff(t))) if len(t) > 1 else 0.0
    return float(t[idx[-1]] - t[idx[0]] + frame_period)


def write_accuracy_csv(series: AccuracySeries, path):
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("t,accuracy,flagged\n")
        for t, a, f in zip(series.times, series.accuracy, series.flagged):
            fh.write(f"{t:.3f},{a:.4f},{int(f)}\n")


def read_accuracy_csv(path) -> AccuracySeries:
    with open(path, encoding="ascii", errors="replace") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "t,accuracy,flagged":
        raise FormatError("header must be 't,accuracy,flagged'", 1)
    rows = []
    for n, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 3:
            raise FormatError("expected 3 fields", n)
        try:
            rows.append((float(parts[0]), float(parts[1]), int(parts[2])))
        except ValueError:
            raise FormatError("non-numeric field", n) from None
    if not rows:
        raise FormatError("no data rows", len(lines))
    t, a, f = zip(*rows)
    return AccuracySeries(np.array(t), np.array(a), np.array(f, dtype=bool))


def safe_accuracy(fn, truth):
    """Accuracy of ``fn()`` against truth, 0 when decoding raises."""
    try:
        return matrix_accuracy(fn(), truth)
    except EmbedTagError:
        return 0.0


# -------------------------------------------------------------------- NIR

NIR_UPSAMPLE = 4
NIR_THRESHOLD = 0.4


def decode_nir_cube(cube, geom: GridGeometry) -> BitMatrix:
    """Band mean, normalise, x4 upsample, cut at 0.4 of the maximum, then
    the same anchored lattice sampling as the thermal path."""
    img = imaging.normalize_u8(cube.mean_image()).astype(np.float64)
    up = imaging.upsample4(img)
    if up.max() <= 0:
        raise NoAnchorContour("scan has no contrast")
    fg = imaging.fixed_threshold(up, NIR_THRESHOLD)
    # set bits are the bright reflector unless the caller says otherwise
    if (geom.polarity == "cold") != geom.invert:
        fg = 1 - fg
    if geom.sample_spacing is not None:
        spacing = geom.sample_spacing * NIR_UPSAMPLE
    else:
        spacing = geom.density_X / cube.step_mm * NIR_UPSAMPLE
    return sample_payload(fg, spacing, geom)
