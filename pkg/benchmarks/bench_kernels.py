"""Compare the compiled and numpy kernel backends on training-sized inputs.

    python benchmarks/bench_kernels.py [--repeat 20]
"""

import argparse
import time

import numpy as np

from semigen import kernels


def _time(fn, repeat):
    fn()
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def cases(rng):
    for n, m in ((64, 64), (256, 256), (64, 1024)):
        x, theta = rng.standard_normal((n, 2)), rng.standard_normal((m, 2))
        yield f"gaussian_lme N={n} M={m}", "gaussian_lme", (x, theta, 50.0)
    counts = rng.poisson(2.0, 256).astype(np.float64)
    rates = rng.uniform(0.1, 5.0, 256)
    yield "poisson_lme N=256 M=256", "poisson_lme", (counts, rates)
    samples = rng.uniform(-5, 5, (50_000, 2))
    centers = np.stack(np.meshgrid(np.arange(-4, 5, 2.0), np.arange(-4, 5, 2.0)), -1).reshape(-1, 2)
    yield "nearest_center S=50000 K=25", "nearest_center", (samples, centers)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=20)
    args = p.parse_args(argv)
    impls = kernels.implementations()
    print(f"active backend: {kernels.BACKEND}; available: {', '.join(impls)}")
    rng = np.random.default_rng(0)
    names = list(impls)
    print(f"{'case':32}" + "".join(f"{n:>14}" for n in names) + ("     speedup" if len(names) > 1 else ""))
    for label, fn_name, fn_args in cases(rng):
        times = []
        outs = []
        for name in names:
            fn = getattr(kernels, fn_name)
            mod = impls[name]
            times.append(_time(lambda: fn(*fn_args, impl=mod), args.repeat))
            outs.append(fn(*fn_args, impl=mod))
        if len(outs) > 1:
            for a, b in zip(outs[0], outs[1]):
                np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)
        row = f"{label:32}" + "".join(f"{t * 1e3:>11.3f} ms" for t in times)
        if len(times) > 1:
            row += f"{times[0] / times[1]:>11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
