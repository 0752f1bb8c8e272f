"""Time the numba and numpy RK4 kernels on the example-1 model.

    python benchmarks/bench_kernels.py --n 200 --t-end 20 --repeat 3
"""

import argparse
import time

import numpy as np

from catqueue import _kernels
from catqueue.rates import example1_model


def run(use_numba: bool, packed, k: int, x0: np.ndarray, nsteps: int, repeat: int) -> tuple[float, np.ndarray]:
    best = np.inf
    states = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        states, *_ = _kernels.rk4_full(packed, k, x0, 0.0, 1e-3, nsteps, 10, True, use_numba)
        best = min(best, time.perf_counter() - t0)
    return best, states


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--t-end", type=float, default=20.0)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    model = example1_model()
    packed = _kernels.pack_model(model)
    x0 = np.zeros(args.n)
    x0[1] = 1.0
    nsteps = round(args.t_end / 1e-3)

    if _kernels.NUMBA_AVAILABLE:
        # first call compiles or loads the cache
        _kernels.rk4_full(packed, model.k, x0, 0.0, 1e-3, 10, 10, True, True)
    t_np, s_np = run(False, packed, model.k, x0, nsteps, args.repeat)
    print(f"numpy  n={args.n} steps={nsteps}: {t_np:.3f} s")
    if not _kernels.NUMBA_AVAILABLE:
        print("numba not installed; fallback only")
        return
    t_nb, s_nb = run(True, packed, model.k, x0, nsteps, args.repeat)
    print(f"numba  n={args.n} steps={nsteps}: {t_nb:.3f} s")
    print(f"speedup {t_np / t_nb:.1f}x, max state difference {np.max(np.abs(s_np - s_nb)):.2e}")


if __name__ == "__main__":
    main()
