"""Time the numba kernels against their numpy twins.

    python benchmarks/bench_kernels.py [--repeat 20] [--end-to-end]

Each kernel is called once to trigger compilation, then timed with
``timeit`` (best of ``--repeat``).  ``--end-to-end`` also runs a short
training loop in two subprocesses, once with ``ADPO_LAB_NUMBA=0``.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from adpo_lab import kernels


def cases(rng):
    m, g = 128, 8
    n, v = 2048, 11
    probs = rng.dirichlet(np.ones(v), size=n)
    return {
        "group_normalize": (
            (rng.integers(0, 2, (m, g)).astype(np.float64), kernels.STD_EPS),
        ),
        "preference_rewards": (
            (rng.integers(0, 11, (m, g)) / 10.0, rng.integers(0, 2, (m, g)).astype(np.float64), False, 0.1),
        ),
        "scatter_add_rows": (
            (np.zeros((1024, v)), rng.integers(0, 1024, n), rng.normal(size=(n, v))),
        ),
        "top_p_filter": ((probs, 0.99),),
        "sample_categorical": ((probs, rng.random(n)),),
    }


def bench(repeat: int) -> list[tuple[str, float, float]]:
    rng = np.random.default_rng(0)
    rows = []
    for name, (args,) in cases(rng).items():
        fn_np = getattr(kernels, f"{name}_numpy")
        fn_jit = getattr(kernels, f"{name}_jit")
        np.testing.assert_allclose(fn_np(*[a.copy() if isinstance(a, np.ndarray) else a for a in args]),
                                   fn_jit(*[a.copy() if isinstance(a, np.ndarray) else a for a in args]),
                                   rtol=0, atol=1e-12)
        t_np = min(timeit.repeat(lambda: fn_np(*args), number=10, repeat=repeat)) / 10
        t_jit = min(timeit.repeat(lambda: fn_jit(*args), number=10, repeat=repeat)) / 10
        rows.append((name, t_np, t_jit))
    return rows


TRAIN_SNIPPET = """
import time
from adpo_lab import Task, TaskSpec, TrainConfig, train
task = Task(TaskSpec("discrete", num_queries=1024, score_bins=2))
train(TrainConfig(steps=2), task)
t = time.perf_counter()
train(TrainConfig(steps=100), task)
print(time.perf_counter() - t)
"""


def end_to_end() -> dict:
    out = {}
    for flag in ("1", "0"):
        env = {**os.environ, "ADPO_LAB_NUMBA": flag}
        res = subprocess.run([sys.executable, "-c", TRAIN_SNIPPET], env=env, capture_output=True, text=True, check=True)
        out["numba" if flag == "1" else "numpy"] = float(res.stdout.strip())
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--end-to-end", action="store_true")
    args = ap.parse_args()
    print(f"{'kernel':<20} {'numpy us':>10} {'numba us':>10} {'speedup':>8}")
    for name, t_np, t_jit in bench(args.repeat):
        print(f"{name:<20} {t_np * 1e6:>10.1f} {t_jit * 1e6:>10.1f} {t_np / t_jit:>8.2f}")
    if args.end_to_end:
        e2e = end_to_end()
        print(f"\n100 train steps: numpy {e2e['numpy']:.2f}s, numba {e2e['numba']:.2f}s")


if __name__ == "__main__":
    main()
