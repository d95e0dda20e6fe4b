"""Pure NumPy/SciPy implementations of the raster kernels.

Each function mirrors the compiled extension expression-for-expression so
both backends agree bitwise. Pixel (i, j) has its center at (x=j, y=i).
"""

import numpy as np
from scipy import ndimage


def _disk_footprint(radius):
    r = int(radius)
    di, dj = np.mgrid[-r : r + 1, -r : r + 1]
    return (di * di + dj * dj) <= r * r


def fill_convex_polygon(xs, ys, h, w):
    """Rasterize a simple convex polygon: pixel set iff its center is inside or on it.

    Vertices may be in either winding order; the polygon must have nonzero area.
    """
    xs = np.ascontiguousarray(xs, dtype=np.float64)
    ys = np.ascontiguousarray(ys, dtype=np.float64)
    n = xs.shape[0]
    if n < 3:
        raise ValueError("polygon needs at least 3 vertices")
    area2 = 0.0
    for k in range(n):
        k2 = (k + 1) % n
        area2 += xs[k] * ys[k2] - xs[k2] * ys[k]
    if area2 == 0.0:
        raise ValueError("degenerate (zero-area) polygon")

    px = np.arange(w, dtype=np.float64)[None, :]
    py = np.arange(h, dtype=np.float64)[:, None]
    inside = np.ones((h, w), dtype=bool)
    for k in range(n):
        k2 = (k + 1) % n
        cross = (xs[k2] - xs[k]) * (py - ys[k]) - (ys[k2] - ys[k]) * (px - xs[k])
        inside &= cross * area2 >= 0.0
    return inside.astype(np.uint8)


def binary_close_disk(mask, radius):
    """Morphological closing (dilate then erode) with a disk structuring element.

    Pixels beyond the frame count as 0 for dilation and 1 for erosion, so
    closing never removes mask pixels at the border.
    """
    mask = np.ascontiguousarray(mask, dtype=np.uint8)
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if radius == 0:
        return mask.copy()
    disk = _disk_footprint(radius)
    dilated = ndimage.binary_dilation(mask.astype(bool), structure=disk)
    closed = ndimage.binary_erosion(dilated, structure=disk, border_value=1)
    return closed.astype(np.uint8)


def capsule_mask(segments, radii, h, w):
    """Union of capsules: pixel set iff within radius of any segment.

    segments: (S, 4) rows [x1, y1, x2, y2]; radii: (S,). A zero-length
    segment yields a disk.
    """
    segments = np.ascontiguousarray(segments, dtype=np.float64)
    radii = np.ascontiguousarray(radii, dtype=np.float64)
    if segments.ndim != 2 or segments.shape[1] != 4:
        raise ValueError("segments must have shape (S, 4)")
    if radii.shape[0] != segments.shape[0]:
        raise ValueError("radii must match segments")

    out = np.zeros((h, w), dtype=np.uint8)
    for k in range(segments.shape[0]):
        x1, y1, x2, y2 = segments[k]
        r = radii[k]
        if r < 0:
            continue
        lo_j = max(int(np.floor(min(x1, x2) - r)) - 1, 0)
        hi_j = min(int(np.ceil(max(x1, x2) + r)) + 2, w)
        lo_i = max(int(np.floor(min(y1, y2) - r)) - 1, 0)
        hi_i = min(int(np.ceil(max(y1, y2) + r)) + 2, h)
        if lo_j >= hi_j or lo_i >= hi_i:
            continue
        px = np.arange(lo_j, hi_j, dtype=np.float64)[None, :]
        py = np.arange(lo_i, hi_i, dtype=np.float64)[:, None]
        dxs = x2 - x1
        dys = y2 - y1
        seg_len2 = dxs * dxs + dys * dys
        if seg_len2 == 0.0:
            dx = px - x1
            dy = py - y1
            d2 = dx * dx + dy * dy
        else:
            t = ((px - x1) * dxs + (py - y1) * dys) / seg_len2
            t = np.clip(t, 0.0, 1.0)
            ex = x1 + t * dxs
            ey = y1 + t * dys
            dx = px - ex
            dy = py - ey
            d2 = dx * dx + dy * dy
        out[lo_i:hi_i, lo_j:hi_j] |= (d2 <= r * r).astype(np.uint8)
    return out
