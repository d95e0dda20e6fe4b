# Compiled raster kernels. Arithmetic mirrors _fallback.py expression-for-
# expression (and the build disables FMA contraction) so results are
# bit-identical to the NumPy backend.

import numpy as np

cimport numpy as cnp

cnp.import_array()


def fill_convex_polygon(xs, ys, int h, int w):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] cxs = np.ascontiguousarray(xs, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] cys = np.ascontiguousarray(ys, dtype=np.float64)
    cdef int n = cxs.shape[0]
    if n < 3:
        raise ValueError("polygon needs at least 3 vertices")

    cdef double area2 = 0.0
    cdef int k, k2
    for k in range(n):
        k2 = (k + 1) % n
        area2 += cxs[k] * cys[k2] - cxs[k2] * cys[k]
    if area2 == 0.0:
        raise ValueError("degenerate (zero-area) polygon")

    cdef cnp.ndarray[cnp.uint8_t, ndim=2] out = np.zeros((h, w), dtype=np.uint8)
    cdef int i, j
    cdef double px, py, cross
    cdef bint inside
    for i in range(h):
        py = <double> i
        for j in range(w):
            px = <double> j
            inside = True
            for k in range(n):
                k2 = (k + 1) % n
                cross = (cxs[k2] - cxs[k]) * (py - cys[k]) - (cys[k2] - cys[k]) * (px - cxs[k])
                if cross * area2 < 0.0:
                    inside = False
                    break
            if inside:
                out[i, j] = 1
    return out


def binary_close_disk(mask, int radius):
    cdef cnp.ndarray[cnp.uint8_t, ndim=2] m = np.ascontiguousarray(mask, dtype=np.uint8)
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if radius == 0:
        return m.copy()

    cdef int h = m.shape[0]
    cdef int w = m.shape[1]
    cdef int r2 = radius * radius
    cdef cnp.ndarray[cnp.uint8_t, ndim=2] dil = np.zeros((h, w), dtype=np.uint8)
    cdef cnp.ndarray[cnp.uint8_t, ndim=2] out = np.zeros((h, w), dtype=np.uint8)
    cdef int i, j, di, dj, ii, jj
    cdef bint hit

    for i in range(h):
        for j in range(w):
            hit = False
            for di in range(-radius, radius + 1):
                ii = i + di
                if ii < 0 or ii >= h:
                    continue
                for dj in range(-radius, radius + 1):
                    if di * di + dj * dj > r2:
                        continue
                    jj = j + dj
                    if jj < 0 or jj >= w:
                        continue
                    if m[ii, jj]:
                        hit = True
                        break
                if hit:
                    break
            dil[i, j] = 1 if hit else 0

    # Erosion treats out-of-frame pixels as set, keeping closing extensive
    # at the border.
    for i in range(h):
        for j in range(w):
            hit = True
            for di in range(-radius, radius + 1):
                ii = i + di
                for dj in range(-radius, radius + 1):
                    if di * di + dj * dj > r2:
                        continue
                    jj = j + dj
                    if ii < 0 or ii >= h or jj < 0 or jj >= w:
                        continue
                    if not dil[ii, jj]:
                        hit = False
                        break
                if not hit:
                    break
            out[i, j] = 1 if hit else 0
    return out


def capsule_mask(segments, radii, int h, int w):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] segs = np.ascontiguousarray(segments, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] rads = np.ascontiguousarray(radii, dtype=np.float64)
    if segs.ndim != 2 or segs.shape[1] != 4:
        raise ValueError("segments must have shape (S, 4)")
    if rads.shape[0] != segs.shape[0]:
        raise ValueError("radii must match segments")

    cdef cnp.ndarray[cnp.uint8_t, ndim=2] out = np.zeros((h, w), dtype=np.uint8)
    cdef int s = segs.shape[0]
    cdef int k, i, j, lo_i, hi_i, lo_j, hi_j
    cdef double x1, y1, x2, y2, r, dxs, dys, seg_len2, px, py, t, ex, ey, dx, dy, d2

    for k in range(s):
        x1 = segs[k, 0]
        y1 = segs[k, 1]
        x2 = segs[k, 2]
        y2 = segs[k, 3]
        r = rads[k]
        if r < 0:
            continue
        lo_j = <int> np.floor(min(x1, x2) - r) - 1
        hi_j = <int> np.ceil(max(x1, x2) + r) + 2
        lo_i = <int> np.floor(min(y1, y2) - r) - 1
        hi_i = <int> np.ceil(max(y1, y2) + r) + 2
        lo_j = max(lo_j, 0)
        hi_j = min(hi_j, w)
        lo_i = max(lo_i, 0)
        hi_i = min(hi_i, h)
        if lo_j >= hi_j or lo_i >= hi_i:
            continue
        dxs = x2 - x1
        dys = y2 - y1
        seg_len2 = dxs * dxs + dys * dys
        for i in range(lo_i, hi_i):
            py = <double> i
            for j in range(lo_j, hi_j):
                if out[i, j]:
                    continue
                px = <double> j
                if seg_len2 == 0.0:
                    dx = px - x1
                    dy = py - y1
                    d2 = dx * dx + dy * dy
                else:
                    t = ((px - x1) * dxs + (py - y1) * dys) / seg_len2
                    if t < 0.0:
                        t = 0.0
                    elif t > 1.0:
                        t = 1.0
                    ex = x1 + t * dxs
                    ey = y1 + t * dys
                    dx = px - ex
                    dy = py - ey
                    d2 = dx * dx + dy * dy
                if d2 <= r * r:
                    out[i, j] = 1
    return out
