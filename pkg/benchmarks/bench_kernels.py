"""Compare the numba and numpy kernel backends on random symbol pairs.

    python benchmarks/bench_kernels.py --lengths 256,1024 --lanes 1,4

Every run checks that both backends (and both kernels) return the same score
before anything is timed.
"""
import argparse
import time

import numpy as np

from madcrow import kernels
from madcrow.alignment import DEFAULT_SCHEME
from madcrow.cli import _int_list


def _best(fn, iters):
    best = float("inf")
    for _ in range(iters):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--lengths", type=_int_list, default=[256, 1024])
    parser.add_argument("--lanes", type=_int_list, default=[1, 4])
    parser.add_argument("--iters", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    backends = {name: kernels.get_backend(name) for name in kernels.available_backends()}
    w = DEFAULT_SCHEME.weights
    rng = np.random.default_rng(args.seed)
    warm = rng.integers(0, 16, 8)
    for mod in backends.values():
        mod.sw_score(warm, warm, *w)
        mod.sw_scan(warm, warm, *w)
        for lanes in args.lanes:
            mod.sw_score_wavefront(warm, warm, *w, lanes)

    print(f"{'kernel':<16} {'length':>7} " + " ".join(f"{name + ' s':>10}" for name in backends) + f" {'ratio':>8}  (ratio = last backend time / first)")
    for n in args.lengths:
        a = rng.integers(0, 16, n).astype(np.int64)
        b = rng.integers(0, 16, n).astype(np.int64)
        cases = [("scalar", lambda m: m.sw_score(a, b, *w))]
        cases += [(f"wavefront/{k}", lambda m, k=k: m.sw_score_wavefront(a, b, *w, k)) for k in args.lanes]
        cases.append(("scan", lambda m: m.sw_scan(a[: min(n, 64)], b, *w)[0].max()))
        for label, fn in cases:
            scores = {int(fn(mod)) for mod in backends.values()}
            if len(scores) != 1:
                raise SystemExit(f"backends disagree on {label} n={n}: {scores}")
            times = [_best(lambda: fn(mod), args.iters) for mod in backends.values()]
            ratio = times[-1] / times[0] if len(times) > 1 else 1.0
            print(f"{label:<16} {n:>7} " + " ".join(f"{t:>10.4f}" for t in times) + f" {ratio:>8.1f}")


if __name__ == "__main__":
    main()
