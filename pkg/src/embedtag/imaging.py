"""Image primitives used by both decoders. Images are 2D numpy arrays
indexed ``[row, col]`` (y, x)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DegenerateHistogram, ImageTooSmall, NoContours

BLUR_SIGMA = 1.1


def gaussian_kernel5(sigma=BLUR_SIGMA):
    x = np.arange(-2, 3, dtype=np.float64)
    w = np.exp(-(x**2) / (2.0 * sigma**2))
    return w / w.sum()


def gaussian_blur5(img, sigma=BLUR_SIGMA):
    """Separable 5x5 Gaussian with mirrored borders (edge sample repeated),
    which keeps the image mean unchanged."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or min(img.shape) < 5:
        raise ImageTooSmall(f"blur needs at least 5x5 pixels, got {img.shape}")
    w = gaussian_kernel5(sigma)
    h, wd = img.shape
    p = np.pad(img, ((0, 0), (2, 2)), mode="symmetric")
    tmp = sum(w[i] * p[:, i:i + wd] for i in range(5))
    p = np.pad(tmp, ((2, 2), (0, 0)), mode="symmetric")
    return sum(w[i] * p[i:i + h, :] for i in range(5))


def normalize_u8(img):
    """Affine map of [min, max] onto [0, 255], rounded half up. A constant
    image maps to zeros."""
    img = np.asarray(img, dtype=np.float64)
    lo, hi = img.min(), img.max()
    if hi == lo:
        return np.zeros(img.shape, dtype=np.uint8)
    return np.floor((img - lo) * (255.0 / (hi - lo)) + 0.5).astype(np.uint8)


def otsu_threshold(img):
    """Otsu threshold t in [0, 254]; pixels > t are foreground.

    The between-class variance (S0*N - S*n0)^2 / (n0*n1) is compared in
    exact integer arithmetic so ties resolve to the smallest t.
    """
    img = np.asarray(img)
    hist = np.bincount(np.asarray(img, dtype=np.int64).ravel(), minlength=256)[:256]
    if np.count_nonzero(hist) < 2:
        raise DegenerateHistogram("image has a single intensity")
    n_cum = np.cumsum(hist).tolist()
    s_cum = np.cumsum(hist * np.arange(256)).tolist()
    N, S = n_cum[-1], s_cum[-1]
    best_t, best_num, best_den = 0, 0, 1
    for t in range(255):
        n0 = n_cum[t]
        n1 = N - n0
        if n0 == 0 or n1 == 0:
            continue
        num = (s_cum[t] * N - S * n0) ** 2
        den = n0 * n1
        if num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    return best_t


def binarize(img, t):
    return (np.asarray(img) > t).astype(np.uint8)


@dataclass
class Contour:
    """Outer border of one 8-connected foreground component.

    ``points`` are (x, y) pixel coordinates in tracing order; ``area`` is the
    component's pixel count; ``bbox`` is inclusive (x0, y0, x1, y1).
    """

    points: np.ndarray
    centroid: tuple
    area: int
    bbox: tuple

    @property
    def width(self):
        return self.bbox[2] - self.bbox[0] + 1

    @property
    def height(self):
        return self.bbox[3] - self.bbox[1] + 1


# clockwise from west, as (dy, dx)
_DIRS = [(0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1)]
_DIR_INDEX = {d: i for i, d in enumerate(_DIRS)}
_EIGHT = np.ones((3, 3), dtype=bool)


def _trace(mask, start):
    """Moore-neighbour border following with Jacob's stopping rule."""
    h, w = mask.shape

    def fg(y, x):
        return 0 <= y < h and 0 <= x < w and mask[y, x]

    cy, cx = start
    b_idx = 0  # start is the first pixel in raster order, so west is background
    start_state = (cy, cx, b_idx)
    points = [(cx, cy)]
    for _ in range(4 * mask.sum() + 16):
        found = None
        for k in range(1, 9):
            j = (b_idx + k) % 8
            dy, dx = _DIRS[j]
            if fg(cy + dy, cx + dx):
                found = j
                break
        if found is None:
            break  # isolated pixel
        dy, dx = _DIRS[found]
        py, px = _DIRS[(found - 1) % 8]
        ny, nx = cy + dy, cx + dx
        b_idx = _DIR_INDEX[(cy + py - ny, cx + px - nx)]
        cy, cx = ny, nx
        if (cy, cx, b_idx) == start_state:
            break
        points.append((cx, cy))
    if len(points) > 1 and points[-1] == points[0]:
        points.pop()
    return np.array(points, dtype=np.int64)


def find_contours(binary):
    """Outer contours of the 8-connected foreground components, in order of
    first encounter in a row-major scan."""
    mask = np.asarray(binary) != 0
    if mask.ndim != 2:
        raise ValueError("binary image must be 2D")
    labels, n = ndimage.label(mask, structure=_EIGHT)
    if n == 0:
        return []
    idx = np.arange(1, n + 1)
    areas = ndimage.sum_labels(np.ones_like(labels), labels, idx)
    ys, xs = np.indices(mask.shape)
    cy = ndimage.mean(ys, labels, idx)
    cx = ndimage.mean(xs, labels, idx)
    slices = ndimage.find_objects(labels)
    contours = []
    for lab in range(1, n + 1):
        sl = slices[lab - 1]
        comp = labels[sl] == lab
        first = np.argmax(comp.ravel())
        sy, sx = divmod(int(first), comp.shape[1])
        pts = _trace(comp, (sy, sx))
        pts = pts + np.array([sl[1].start, sl[0].start])
        bbox = (sl[1].start, sl[0].start, sl[1].stop - 1, sl[0].stop - 1)
        contours.append(Contour(pts, (float(cx[lab - 1]), float(cy[lab - 1])),
                                int(areas[lab - 1]), bbox))
    # ndimage labels follow raster order of first pixel already
    return contours


def crop_largest(img, contours):
    if not contours:
        raise NoContours("no contour to crop to")
    best = max(contours, key=lambda c: c.area)  # max keeps the first of equals
    x0, y0, x1, y1 = best.bbox
    return np.asarray(img)[y0:y1 + 1, x0:x1 + 1]


def _cubic_weights(t, a=-0.5):
    """Keys cubic convolution weights for offsets -1, 0, 1, 2 at fraction t."""
    t = np.asarray(t)
    w = np.empty(t.shape + (4,))
    for i, d in enumerate((1 + t, t, 1 - t, 2 - t)):
        d = np.abs(d)
        w[..., i] = np.where(
            d <= 1,
            (a + 2) * d**3 - (a + 3) * d**2 + 1,
            np.where(d < 2, a * d**3 - 5 * a * d**2 + 8 * a * d - 4 * a, 0.0),
        )
    return w


def _resample_axis(img, factor, axis):
    img = np.moveaxis(img, axis, 0)
    n = img.shape[0]
    pos = (np.arange(n * factor) + 0.5) / factor - 0.5
    base = np.floor(pos).astype(int)
    w = _cubic_weights(pos - base)
    # odd reflection keeps linear ramps linear past the border
    lo = 2 * img[:1] - img[1:3][::-1] if n > 2 else np.repeat(img[:1], 2, axis=0)
    hi = 2 * img[-1:] - img[-3:-1][::-1] if n > 2 else np.repeat(img[-1:], 2, axis=0)
    padded = np.concatenate([lo, img, hi])
    out = sum(w[:, i, None] * padded[base + i + 1] for i in range(4))
    return np.moveaxis(out, 0, axis)


def upsample4(img):
    """x4 Catmull-Rom upsampling (pixel-centre aligned), clamped to the
    input range."""
    img = np.asarray(img, dtype=np.float64)
    if img.size == 0:
        raise ValueError("cannot upsample an empty image")
    out = _resample_axis(_resample_axis(img, 4, 0), 4, 1)
    return np.clip(out, img.min(), img.max())


def fixed_threshold(img, frac):
    if not 0 < frac < 1:
        raise ValueError("frac must be in (0, 1)")
    img = np.asarray(img, dtype=np.float64)
    return (img > frac * img.max()).astype(np.uint8)


def write_pgm(img, path):
    """Debug dump of an image as 8-bit binary PGM (P5)."""
    data = np.asarray(img)
    if data.dtype != np.uint8:
        data = normalize_u8(data)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode("ascii"))
        fh.write(data.tobytes())
