"""Compare the numba and pure-numpy kernels on desk-scale inputs.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Both variants run in this process (they are importable by name), so the
DTW_NUMBA flag does not matter here. JIT compilation is excluded by one
warm-up call per kernel. Results are checked for agreement before timing.
"""
import argparse
import time

import numpy as np

from dtwin.ml import _kernels as K
from dtwin.ml import mlp, tree


def make_inputs(seed=0, n=2000, d=20):
    rng = np.random.default_rng(seed)
    X = rng.random((n, d))
    y = (X[:, 0] + 0.3 * rng.random(n) > 0.6).astype(np.int64)
    forest = tree.train_forest(X, y, n_estimators=25, max_depth=16, min_samples_split=2, seed=seed)
    params = mlp.init_params(d, (11, 11, 11), rng)
    flat, widths = mlp.pack(params)
    Xa = np.hstack([X, np.ones((n, 1))])
    ypm = np.where(y == 1, 1.0, -1.0)
    order = np.concatenate([rng.permutation(n) for _ in range(5)])
    return {
        "best_split": (X, y, np.arange(n, dtype=np.int64), np.arange(d, dtype=np.int64)),
        "forest_votes": (X, *(forest[k] for k in ("feature", "threshold", "left", "right", "value", "roots"))),
        "pegasos": (Xa, ypm, order, 1e-3),
        "mlp_scores": (X, flat, widths),
        # one record per call, as the fog classifies
        "mlp_scores/1": (np.ascontiguousarray(X[:1]), flat, widths),
    }


def timeit(fn, args, repeat, inner=1):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        for _ in range(inner):
            fn(*args)
        times.append((time.perf_counter() - t0) / inner)
    return min(times)


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-12, atol=1e-12)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if not K.HAVE_NUMBA:
        print("numba is not installed; nothing to compare")
        return
    inputs = make_inputs(args.seed)
    print(f"{'kernel':<14}{'numpy (ms)':>12}{'numba (ms)':>12}{'speedup':>10}")
    for name, kargs in inputs.items():
        base = name.split("/")[0]
        inner = 1000 if name.endswith("/1") else 1
        f_np = getattr(K, base + "_np")
        f_nb = getattr(K, base + "_nb")
        r_nb = f_nb(*kargs)  # warm-up / compile
        assert same(f_np(*kargs), r_nb), f"{name}: numba and numpy disagree"
        t_np = timeit(f_np, kargs, args.repeat, inner)
        t_nb = timeit(f_nb, kargs, args.repeat, inner)
        print(f"{name:<14}{t_np * 1e3:>12.4f}{t_nb * 1e3:>12.4f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
