"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py --reps 8192 --steps 400
"""

import argparse
import timeit

import numpy as np

from bpre import _kernels_py, kernels
from bpre.environment import preset


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=8192)
    ap.add_argument("--steps", type=int, default=400)
    ap.add_argument("--preset", default="geometric-2type")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    law = preset(args.preset)
    rng = np.random.default_rng(0)
    k, u = law.sample_indices(rng, (args.reps, args.steps))
    horizons = np.arange(100, args.steps + 1, 50)
    inc = rng.normal(0.0, 1.0, (args.reps, args.steps))

    impls = {"python": _kernels_py}
    if kernels.BACKEND == "cython":
        impls["cython"] = kernels._impl
    else:
        print("compiled extension not built; timing the numpy fallback only")

    results = {}
    for name, impl in impls.items():
        t_q = min(timeit.repeat(
            lambda: kernels.quenched_survival_batch(law.family, law.shapes, k, u, horizons, impl=impl),
            number=1, repeat=args.repeat))
        t_p = min(timeit.repeat(lambda: kernels.passage_times(inc, 1.0, impl=impl),
                                number=1, repeat=args.repeat))
        results[name] = (t_q, t_p)
        print(f"{name:7s} quenched_survival_batch {t_q * 1e3:9.1f} ms   passage_times {t_p * 1e3:8.1f} ms")
    if "cython" in results:
        q_py, p_py = results["python"]
        q_c, p_c = results["cython"]
        print(f"speedup  quenched_survival_batch {q_py / q_c:6.1f}x   passage_times {p_py / p_c:6.1f}x")
        a = kernels.quenched_survival_batch(law.family, law.shapes, k[:256], u[:256], horizons,
                                            impl=_kernels_py)
        b = kernels.quenched_survival_batch(law.family, law.shapes, k[:256], u[:256], horizons,
                                            impl=impls["cython"])
        print(f"max abs difference on 256 replicas: {np.abs(a - b).max():.2e}")


if __name__ == "__main__":
    main()
