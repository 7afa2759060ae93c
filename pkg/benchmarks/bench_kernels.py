"""Compiled vs numpy kernels.

    python3 benchmarks/bench_kernels.py [--repeat N]

Each kernel runs on the same inputs under both backends; the table lists the
best-of-N wall time, the speedup and the largest absolute difference.
"""

import argparse
import timeit

import numpy as np

from calderon import _kernels_py as py

try:
    from calderon import _kernels as cy
except ImportError:  # pragma: no cover
    cy = None


def cases(rng):
    s0 = (0.3, -0.95, 0.1, 1.0)
    yield "geodesic_march", lambda m: m.geodesic_march(s0, 1e-3, 0.3, 0.6, 5000)

    # unit-speed rays that stay inside the disk, as in chart construction
    a = rng.uniform(0, 2 * np.pi, 512)
    st = np.vstack([rng.uniform(-0.3, 0.3, (2, 512)), np.cos(a), np.sin(a)])
    h = rng.uniform(1e-3, 1e-2, 512)
    yield "shoot_conformal", lambda m: m.shoot_conformal(st, h, 64, 0.3, 0.6)

    v = rng.standard_normal((16, 32))
    r, t = rng.uniform(0, 1, 20000), rng.uniform(0, 2 * np.pi, 20000)
    px, py_ = r * np.cos(t), r * np.sin(t)
    yield "polar_interp", lambda m: m.polar_interp(v, 1 / 32, 1 / 16, 16, 32, px, py_)

    offs = -1 + (np.arange(64) + 0.5) / 32
    ang = np.arange(128) * 2 * np.pi / 128
    f = rng.standard_normal((128, 64))
    gx, gy = np.meshgrid(np.linspace(-1, 1, 64), np.linspace(-1, 1, 64))
    yield "backproject", lambda m: m.backproject(f, offs, ang, gx.ravel(), gy.ravel(), 0.6)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if cy is None:
        print("compiled kernels not built; nothing to compare")
        return
    rng = np.random.default_rng(0)
    print(f"{'kernel':18s} {'numpy [ms]':>11s} {'cython [ms]':>12s} {'speedup':>8s} {'max diff':>10s}")
    for name, fn in cases(rng):
        tp = min(timeit.repeat(lambda: fn(py), number=1, repeat=args.repeat))
        tc = min(timeit.repeat(lambda: fn(cy), number=1, repeat=args.repeat))
        d = float(np.abs(np.asarray(fn(py)) - np.asarray(fn(cy))).max())
        print(f"{name:18s} {1e3 * tp:11.2f} {1e3 * tc:12.2f} {tp / tc:8.1f} {d:10.1e}")


if __name__ == "__main__":
    main()
