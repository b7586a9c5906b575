"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py --dims 4,16,64 --repeat 20
"""
import argparse
import time

import numpy as np

from koopstab import kernels


def best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dims", default="4,8,16,32,64")
    ap.add_argument("--repeat", type=int, default=10)
    ap.add_argument("--T", type=int, default=50, help="rollout horizon")
    ap.add_argument("--k", type=int, default=7, help="trajectories per rollout")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    backends = kernels.backends()
    if "compiled" not in backends:
        print("compiled extension not built; only the fallback is timed")
    rng = np.random.default_rng(args.seed)
    names = list(backends)
    print("kernel,N," + ",".join(f"{b}_ms" for b in names) + ",speedup")
    for N in (int(d) for d in args.dims.split(",")):
        A = rng.standard_normal((N, N))
        A *= 0.9 / np.abs(np.linalg.eigvals(A)).max()
        Z0 = rng.standard_normal((N, args.k))
        Z = kernels.rollout_forward(A, Z0, args.T)
        G = rng.standard_normal(Z.shape)
        cases = {
            "eigvals": lambda m: m.eigvals(A),
            "rollout_forward": lambda m: m.rollout_forward(A, Z0, args.T),
            "rollout_backward": lambda m: m.rollout_backward(A, Z, G, args.T),
        }
        for kernel, call in cases.items():
            times = {b: best_of(lambda: call(mod), args.repeat) for b, mod in backends.items()}
            speedup = times["python"] / times["compiled"] if "compiled" in times else 1.0
            cells = ",".join(f"{1e3 * times[b]:.4f}" for b in names)
            print(f"{kernel},{N},{cells},{speedup:.2f}")


if __name__ == "__main__":
    main()
