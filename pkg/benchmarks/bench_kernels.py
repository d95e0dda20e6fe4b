"""Benchmark the compiled raster kernels against the pure-Python fallback.

Runs each kernel on representative workloads (hand-sized convex hulls,
skeleton capsule unions, mask closing), checks that both backends agree
bitwise, and prints per-kernel timings with the speedup factor.

Usage:
    python benchmarks/bench_kernels.py [--repeats N] [--size HxW]
"""

import argparse
import time

import numpy as np

from handvid.kernels import _fallback

try:
    from handvid.kernels import _native
except ImportError:
    _native = None


def _time(fn, args, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def _workloads(h, w, rng):
    # Convex hull roughly the size of a rendered hand.
    angles = np.sort(rng.uniform(0, 2 * np.pi, size=12))
    cx, cy = w * 0.5, h * 0.5
    r = min(h, w) * 0.3
    hull_xs = cx + r * np.cos(angles) * rng.uniform(0.7, 1.0, size=12)
    hull_ys = cy + r * np.sin(angles) * rng.uniform(0.7, 1.0, size=12)

    # Twenty bone segments, matching one articulated hand.
    p1 = rng.uniform(0.2, 0.8, size=(20, 2)) * (w, h)
    p2 = p1 + rng.uniform(-0.1, 0.1, size=(20, 2)) * (w, h)
    segments = np.concatenate([p1, p2], axis=1)
    radii = rng.uniform(1.0, 2.5, size=20)

    mask = (rng.random((h, w)) > 0.6).astype(np.uint8)

    return [
        ("fill_convex_polygon", (hull_xs, hull_ys, h, w)),
        ("capsule_mask", (segments, radii, h, w)),
        ("binary_close_disk", (mask, 2)),
    ]


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=200)
    parser.add_argument("--size", default="64x64", help="frame size as HxW")
    args = parser.parse_args(argv)

    h, w = (int(v) for v in args.size.lower().split("x"))
    rng = np.random.default_rng(0)
    work = _workloads(h, w, rng)

    if _native is None:
        print("compiled extension not available; timing the fallback only")

    print(f"frame {h}x{w}, best of {args.repeats} runs, times in microseconds")
    header = f"{'kernel':<22} {'python':>10} {'native':>10} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for name, call_args in work:
        fb = getattr(_fallback, name)
        t_py = _time(fb, call_args, args.repeats) * 1e6
        if _native is not None:
            nat = getattr(_native, name)
            if not np.array_equal(fb(*call_args), nat(*call_args)):
                raise AssertionError(f"{name}: backends disagree")
            t_nat = _time(nat, call_args, args.repeats) * 1e6
            print(f"{name:<22} {t_py:>10.1f} {t_nat:>10.1f} {t_py / t_nat:>7.1f}x")
        else:
            print(f"{name:<22} {t_py:>10.1f} {'-':>10} {'-':>8}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
