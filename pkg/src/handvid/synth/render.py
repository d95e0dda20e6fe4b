"""Rasterized scene drawing: static background, clutter, articulated hands."""

import numpy as np

from handvid import kernels
from handvid.hand_pose import FINGER_CHAINS, FINGERTIPS, JOINTS_PER_HAND
from handvid.motion_area import convex_hull, rasterize_hull

# Capsule radii along a finger chain, palm side to tip, at unit hand scale.
BONE_RADII = (2.6, 2.3, 2.0, 1.8)
PALM_JOINTS = (0, 1, 5, 9, 13, 17)


def make_background(height, width, clutter_level, rng):
    """Vertical color gradient plus static geometric distractor shapes."""
    top = rng.uniform(0.25, 0.75, size=3)
    bottom = rng.uniform(0.25, 0.75, size=3)
    t = np.linspace(0.0, 1.0, height)[:, None, None]
    bg = top[None, None, :] * (1.0 - t) + bottom[None, None, :] * t
    bg = np.broadcast_to(bg, (height, width, 3)).copy()
    for _ in range(clutter_level):
        kind = int(rng.integers(0, 3))
        color = rng.uniform(0.0, 1.0, size=3)
        if kind == 0:
            i0 = int(rng.integers(0, height - 4))
            j0 = int(rng.integers(0, width - 4))
            hgt = int(rng.integers(3, max(4, height // 4)))
            wid = int(rng.integers(3, max(4, width // 4)))
            bg[i0 : min(i0 + hgt, height), j0 : min(j0 + wid, width)] = color
        elif kind == 1:
            cx = rng.uniform(2, width - 2)
            cy = rng.uniform(2, height - 2)
            r = rng.uniform(2.0, min(height, width) / 6.0)
            seg = np.array([[cx, cy, cx, cy]])
            disk = kernels.capsule_mask(seg, np.array([r]), height, width)
            bg[np.asarray(disk) > 0] = color
        else:
            pts = rng.uniform(0, [width - 1, height - 1], size=(3, 2))
            tri = rasterize_hull(convex_hull(pts), height, width)
            bg[tri > 0] = color
    return bg


def hand_palette(rng, n_hands):
    """Base color per hand; fingers brighten off the base."""
    colors = []
    for _ in range(n_hands):
        hue = rng.uniform(0.0, 1.0, size=3)
        base = 0.35 + 0.55 * hue
        colors.append(base)
    return colors


def draw_hands(frame, joints_px, visibility, clip_mask, colors, radius_scale=1.0):
    """Draw hands in place, restricted to the frame's motion-area mask.

    joints_px: (n_hands, 21, 2) integer pixel coordinates; visibility
    matches. Every painted pixel is ANDed with clip_mask, so nothing ever
    lands outside the ground-truth mask.
    """
    h, w = clip_mask.shape
    clip = np.asarray(clip_mask) > 0
    n_hands = joints_px.shape[0]
    for hand in range(n_hands):
        pts = joints_px[hand].astype(np.float64)
        vis = visibility[hand] > 0
        if not vis.any():
            continue
        base = colors[hand]
        palm_pts = [pts[j] for j in PALM_JOINTS if vis[j]]
        if len(palm_pts) >= 3:
            palm = rasterize_hull(convex_hull(palm_pts), h, w)
            frame[(palm > 0) & clip] = base
        for f, chain in enumerate(FINGER_CHAINS):
            segs = []
            radii = []
            for k in range(4):
                a, b = chain[k], chain[k + 1]
                if vis[a] and vis[b]:
                    segs.append([pts[a, 0], pts[a, 1], pts[b, 0], pts[b, 1]])
                    radii.append(BONE_RADII[k] * radius_scale)
            if not segs:
                continue
            color = np.clip(base * (0.72 + 0.09 * f), 0.0, 1.0)
            m = kernels.capsule_mask(
                np.array(segs, dtype=np.float64), np.array(radii), h, w
            )
            frame[(np.asarray(m) > 0) & clip] = color
        tips = [pts[j] for j in FINGERTIPS if vis[j]]
        if tips:
            segs = np.array([[p[0], p[1], p[0], p[1]] for p in tips])
            radii = np.full(len(tips), 1.1 * radius_scale)
            m = kernels.capsule_mask(segs, radii, h, w)
            dot = np.clip(base * 1.25 + 0.15, 0.0, 1.0)
            frame[(np.asarray(m) > 0) & clip] = dot
    return frame


def quantize_video(frames_float):
    """Snap float frames to the uint8 grid; lossless PNG round trips."""
    arr = np.asarray(frames_float, dtype=np.float64)
    return (np.rint(arr * 255.0) / 255.0).astype(np.float32)
