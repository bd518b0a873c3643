"""Compare the numba and numpy clearance kernels.

Times the batched shaft-vs-capsule clearance (the planner's hot loop) and
the scalar segment distance on both backends, printing per-call times and
the speedup.  Sizes mirror a real planning query: a full entry grid
against the two default arch capsules, plus a small grid for overhead.

Run from the repository root:

    python3 benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from prostasim import _kernels, active_backend, set_backend


def make_case(rng, n_entries, n_capsules):
    entries = rng.uniform(-46.0, 46.0, (n_entries, 2))
    target = np.array([6.0, 10.0, 5.0])
    cap_a = rng.uniform(-35.0, 35.0, (n_capsules, 3))
    cap_a[:, 2] = rng.uniform(-40.0, -25.0, n_capsules)
    cap_b = cap_a + rng.uniform(-25.0, 25.0, (n_capsules, 3))
    cap_r = rng.uniform(4.0, 9.0, n_capsules)
    return entries, target, cap_a, cap_b, cap_r


def time_call(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_clearance(rng, repeats):
    print(f"{'grid':>8} {'capsules':>8} {'numpy':>12} {'numba':>12} {'speedup':>8}")
    for n_entries, n_capsules in ((64, 2), (512, 2), (2116, 2), (2116, 8)):
        case = make_case(rng, n_entries, n_capsules)
        times = {}
        for backend in ("numpy", "numba"):
            set_backend(backend)
            _kernels.clearance_grid(case[0], -60.0, case[1], 10.0, *case[2:], 0.635)  # warmup
            times[backend] = time_call(
                lambda: _kernels.clearance_grid(case[0], -60.0, case[1], 10.0, *case[2:], 0.635),
                repeats,
            )
        print(
            f"{n_entries:>8} {n_capsules:>8} {times['numpy'] * 1e6:>10.1f}us "
            f"{times['numba'] * 1e6:>10.1f}us {times['numpy'] / times['numba']:>7.1f}x"
        )


def bench_scalar(rng, repeats):
    segs = rng.uniform(-30.0, 30.0, (1000, 4, 3))
    for backend in ("numpy", "numba"):
        set_backend(backend)
        _kernels.seg_seg_dist(*segs[0])  # warmup
        t = time_call(lambda: [_kernels.seg_seg_dist(*s) for s in segs], repeats)
        print(f"seg_seg_dist x1000 ({backend}): {t * 1e3:.2f} ms")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=20, help="timing repeats (best-of)")
    args = parser.parse_args()

    rng = np.random.default_rng(7)
    original = active_backend()
    print(f"default backend: {original}")
    try:
        bench_clearance(rng, args.repeats)
        bench_scalar(rng, args.repeats)
    except RuntimeError as e:
        print(f"skipping numba comparison: {e}")
    finally:
        set_backend(original)


if __name__ == "__main__":
    main()
