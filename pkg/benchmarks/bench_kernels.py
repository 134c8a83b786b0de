"""Time the compiled training loop against the pure-Python reference.

    python3 benchmarks/bench_kernels.py [--steps N] [--repeats R]

Both backends consume identical uniforms, so the final parameters are also
compared to confirm they agree.
"""
import argparse
import time

import numpy as np

from bitdlab import kernels
from bitdlab.harness import ExperimentConfig, Problem, run_single

CASES = (
    ("TD0", 0.0),
    ("TDLambda", 0.6),
    ("RefreshedTDLambda", 0.6),
    ("BiTD_FR", 0.6),
    ("BiTD_FBi", 0.6),
)


def best_time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - start)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=5000)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args(argv)
    if kernels.train_run_compiled is None:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")

    cfg = ExperimentConfig(steps=args.steps)
    problem = Problem.build(cfg)
    print(f"{'method':<20}{'python s':>10}{'compiled s':>12}{'speedup':>10}{'max |dp|':>12}")
    for method, lam in CASES:
        run = lambda backend: run_single(cfg, method, 0.01, lam, 0, problem, backend)
        t_py, r_py = best_time(lambda: run(kernels.train_run_python), args.repeats)
        t_c, r_c = best_time(lambda: run(kernels.train_run_compiled), args.repeats)
        gap = float(np.abs(r_py.final_params - r_c.final_params).max())
        print(f"{method:<20}{t_py:>10.3f}{t_c:>12.4f}{t_py / t_c:>10.1f}{gap:>12.2e}")


if __name__ == "__main__":
    main()
