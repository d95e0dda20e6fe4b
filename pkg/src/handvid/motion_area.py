"""Motion-area mask construction and post-processing.

Per-frame masks are filled convex hulls of the visible hand keypoints; the
motion-area mask for a video is their union over frames, broadcast back
over time. The dataset prior mask is the per-pixel mean of the training
union masks. Stage-1 soft outputs are binarized, closed and unioned here.

Coordinate convention: points are (x, y) in pixel units, where pixel
(row=i, col=j) has its center at (x=j, y=i).
"""

from dataclasses import dataclass

import numpy as np

from handvid import kernels

MASK_KINDS = ("per_frame", "union", "prior", "generated")


@dataclass
class MaskVideo:
    """Spatio-temporal mask, values (frames, H, W) in [0, 1].

    `values` may be a NumPy array or a torch tensor (soft generated masks
    keep their autograd graph). `binary` promises values in {0, 1}.
    """

    values: "np.ndarray"
    binary: bool
    kind: str

    def __post_init__(self):
        if self.kind not in MASK_KINDS:
            raise ValueError(f"unknown mask kind {self.kind!r}")
        if getattr(self.values, "ndim", None) != 3:
            raise ValueError("mask values must have shape (frames, H, W)")

    @property
    def frames(self):
        return self.values.shape[0]

    @property
    def spatial_shape(self):
        return tuple(self.values.shape[1:])

    def numpy(self):
        if isinstance(self.values, np.ndarray):
            return self.values
        return self.values.detach().cpu().numpy()

    def frame(self, idx=0):
        return self.numpy()[idx]

    def validate(self):
        vals = self.numpy()
        if vals.min() < 0 or vals.max() > 1:
            raise ValueError("mask values out of [0, 1]")
        if self.binary and not np.isin(vals, (0, 1)).all():
            raise ValueError("binary mask has non-{0,1} values")
        if self.kind == "union" and self.frames > 1:
            if not (vals == vals[0]).all():
                raise ValueError("union mask frames must be identical")
        return self


def convex_hull(points):
    """Convex hull of 2-D points via the monotone chain, vertices in order.

    Returns an (M, 2) float array. Collinear inputs reduce to the two
    extreme endpoints; a single point to itself. Empty input returns an
    empty (0, 2) array as the empty-hull signal.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if pts.shape[0] == 0:
        return np.empty((0, 2), dtype=np.float64)
    uniq = sorted({(float(x), float(y)) for x, y in pts})
    if len(uniq) == 1:
        return np.array(uniq, dtype=np.float64)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower = []
    for p in uniq:
        while len(lower) > 1 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper = []
    for p in reversed(uniq):
        while len(upper) > 1 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1]
    if len(hull) == 2 and hull[0] == hull[1]:
        hull = hull[:1]
    return np.array(hull, dtype=np.float64)


def _point_pixels(x, y, h, w):
    mask = np.zeros((h, w), dtype=np.uint8)
    j = int(np.rint(x))
    i = int(np.rint(y))
    if 0 <= i < h and 0 <= j < w:
        mask[i, j] = 1
    return mask


def _segment_pixels(p0, p1, h, w):
    """Pixels whose unit cell the segment passes through (cell coverage)."""
    x0, y0 = p0
    x1, y1 = p1
    mask = np.zeros((h, w), dtype=np.uint8)
    lo_j = max(int(np.floor(min(x0, x1) - 0.5)), 0)
    hi_j = min(int(np.ceil(max(x0, x1) + 0.5)) + 1, w)
    lo_i = max(int(np.floor(min(y0, y1) - 0.5)), 0)
    hi_i = min(int(np.ceil(max(y0, y1) + 0.5)) + 1, h)
    dx = x1 - x0
    dy = y1 - y0
    for i in range(lo_i, hi_i):
        for j in range(lo_j, hi_j):
            # Liang-Barsky clip of the segment against the pixel cell.
            t0, t1 = 0.0, 1.0
            ok = True
            for p, q in (
                (-dx, x0 - (j - 0.5)),
                (dx, (j + 0.5) - x0),
                (-dy, y0 - (i - 0.5)),
                (dy, (i + 0.5) - y0),
            ):
                if p == 0.0:
                    if q < 0.0:
                        ok = False
                        break
                    continue
                r = q / p
                if p < 0.0:
                    if r > t1:
                        ok = False
                        break
                    t0 = max(t0, r)
                else:
                    if r < t0:
                        ok = False
                        break
                    t1 = min(t1, r)
            if ok and t0 <= t1:
                mask[i, j] = 1
    return mask


def rasterize_hull(polygon, h, w):
    """Binary frame mask for a hull polygon, pixel-center inclusion.

    Nondegenerate polygons set a pixel iff its center lies inside or on the
    polygon; segment/point hulls rasterize to their covered pixels; an
    empty hull gives an all-zero frame.
    """
    if h < 1 or w < 1:
        raise ValueError("frame size must be at least 1x1")
    poly = np.asarray(polygon, dtype=np.float64).reshape(-1, 2)
    if poly.shape[0] == 0:
        return np.zeros((h, w), dtype=np.uint8)
    if poly.shape[0] == 1:
        return _point_pixels(poly[0, 0], poly[0, 1], h, w)
    if poly.shape[0] == 2:
        return _segment_pixels(poly[0], poly[1], h, w)
    xs = poly[:, 0]
    ys = poly[:, 1]
    area2 = np.sum(xs * np.roll(ys, -1) - np.roll(xs, -1) * ys)
    if area2 == 0.0:
        # Collinear vertices: rasterize the extreme segment.
        order = np.lexsort((ys, xs))
        return _segment_pixels(poly[order[0]], poly[order[-1]], h, w)
    return kernels.fill_convex_polygon(xs, ys, h, w)


def frame_mask_from_points(points, h, w):
    """Convex-hull mask of one frame's visible keypoints (pixel coords)."""
    return rasterize_hull(convex_hull(points), h, w)


def masks_from_keypoints(coords_px, visibility, h, w):
    """Per-frame hull masks plus their temporal union.

    coords_px: (frames, J, 2) pixel coordinates; visibility: (frames, J)
    in {0, 1}. Only visible joints enter each frame's hull.
    """
    coords_px = np.asarray(coords_px, dtype=np.float64)
    visibility = np.asarray(visibility)
    frames = coords_px.shape[0]
    per = np.zeros((frames, h, w), dtype=np.uint8)
    for l in range(frames):
        vis = visibility[l] > 0
        per[l] = frame_mask_from_points(coords_px[l][vis], h, w)
    per_frame = MaskVideo(per, binary=True, kind="per_frame")
    return per_frame, union_over_frames(per_frame)


def union_over_frames(per_frame_masks):
    """Pixelwise OR over frames, broadcast back to every frame."""
    if not per_frame_masks.binary:
        raise ValueError("union requires binary per-frame masks")
    vals = per_frame_masks.numpy()
    union = vals.max(axis=0)
    out = np.broadcast_to(union, vals.shape).copy()
    return MaskVideo(out, binary=True, kind="union")


def prior_mask(training_union_masks):
    """Per-pixel mean of binary union masks over the training set."""
    if not training_union_masks:
        raise ValueError("need at least one union mask")
    spatials = []
    shape = None
    for m in training_union_masks:
        if not m.binary:
            raise ValueError("prior is computed over binary union masks")
        if shape is None:
            shape = m.spatial_shape
        elif m.spatial_shape != shape:
            raise ValueError(
                f"resolution mismatch: {m.spatial_shape} vs {shape}"
            )
        spatials.append(m.frame(0).astype(np.float64))
    mean = np.mean(spatials, axis=0)
    return MaskVideo(mean[None], binary=False, kind="prior")


def postprocess_soft_mask(soft, threshold=0.5, radius=2):
    """Binarize a soft mask video, close each frame, then union over time."""
    if not (0.0 < threshold < 1.0):
        raise ValueError("threshold must lie strictly inside (0, 1)")
    if radius < 0:
        raise ValueError("radius must be >= 0")
    vals = soft.numpy()
    if vals.min() < 0 or vals.max() > 1:
        raise ValueError("soft mask values must lie in [0, 1]")
    binarized = (vals >= threshold).astype(np.uint8)
    closed = np.stack(
        [kernels.binary_close_disk(frame, radius) for frame in binarized]
    )
    out = union_over_frames(MaskVideo(closed, binary=True, kind="per_frame"))
    return MaskVideo(out.values, binary=True, kind="generated")


def downsample_mask(mask, factor):
    """Area-average a mask to latent resolution; binary masks re-binarize at 0.5.

    Soft masks (e.g. the prior) stay soft; this is the form concatenated as
    the conditioning channel.
    """
    vals = mask.numpy().astype(np.float64)
    f, h, w = vals.shape
    if h % factor or w % factor:
        raise ValueError("mask size not divisible by downsampling factor")
    pooled = vals.reshape(f, h // factor, factor, w // factor, factor).mean(axis=(2, 4))
    if mask.binary:
        pooled = (pooled >= 0.5).astype(np.float64)
    return MaskVideo(pooled, binary=mask.binary, kind=mask.kind)
