"""Pixel-loop kernels: compiled fast path with a NumPy/SciPy fallback.

The compiled extension and the fallback implement identical arithmetic
(same expression order, no FMA contraction), so outputs are bit-identical.
Set HANDVID_PURE_PYTHON=1 to force the fallback.
"""

import os

if os.environ.get("HANDVID_PURE_PYTHON"):
    from handvid.kernels import _fallback as _impl

    BACKEND = "python"
else:
    try:
        from handvid.kernels import _native as _impl  # type: ignore[attr-defined]

        BACKEND = "native"
    except ImportError:
        from handvid.kernels import _fallback as _impl

        BACKEND = "python"

fill_convex_polygon = _impl.fill_convex_polygon
binary_close_disk = _impl.binary_close_disk
capsule_mask = _impl.capsule_mask

__all__ = ["BACKEND", "fill_convex_polygon", "binary_close_disk", "capsule_mask"]
