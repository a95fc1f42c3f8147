"""Benchmark the numba tree kernels against the pure-numpy fallback.

Runs the same boosted-trees fit in two subprocesses, one with
TQSREG_NO_NUMBA=1, and reports wall times.  Usage:

    python3 benchmarks/bench_split_kernel.py [n_rows] [n_features]
"""

import os
import subprocess
import sys
import time

WORKLOAD = """
import time
import numpy as np
from tqsreg import regress
from tqsreg._kernels import USING_NUMBA

rng = np.random.default_rng(0)
m, d = {m}, {d}
x = rng.uniform(-1, 1, size=(m, d))
y = np.sin(3 * x[:, 0]) + 0.3 * rng.normal(size=m)
cfg = regress.RegressorConfig("boosted_trees")

model = regress.fit(cfg, x, y)          # warm-up (includes jit compile)
t0 = time.perf_counter()
for _ in range(5):
    model = regress.fit(cfg, x, y)
elapsed = (time.perf_counter() - t0) / 5
pred = model.predict(x)
print(f"numba={{USING_NUMBA}} fit={{elapsed:.4f}}s "
      f"train_mse={{np.mean((y - pred) ** 2):.6f}}")
"""


def run(no_numba, m, d):
    env = dict(os.environ)
    env["TQSREG_NO_NUMBA"] = "1" if no_numba else "0"
    t0 = time.perf_counter()
    out = subprocess.run(
        [sys.executable, "-c", WORKLOAD.format(m=m, d=d)],
        env=env, capture_output=True, text=True, check=True,
    )
    total = time.perf_counter() - t0
    print(f"{'numpy fallback' if no_numba else 'numba kernels '}: "
          f"{out.stdout.strip()}  (process total {total:.1f}s)")


def main():
    m = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
    d = int(sys.argv[2]) if len(sys.argv) > 2 else 8
    print(f"boosted-trees fit benchmark, {m} rows x {d} features, "
          f"100 stages, depth 3 (mean of 5 fits)")
    run(False, m, d)
    run(True, m, d)


if __name__ == "__main__":
    main()
