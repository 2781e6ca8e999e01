"""Benchmark the cycle integrator: numba kernels vs the numpy fallback.

The kernel path is frozen when ``cardiorom.onefiber`` is imported, controlled
by the ``CARDIOROM_NUMBA`` environment variable, so each mode is timed in its
own subprocess. Run directly:

    python benchmarks/bench_kernels.py [--n-sims 200] [--n-cycles 6] [--dt 2.0]

The workload mimics the calibration hot path: repeated multi-cycle
simulations with perturbed correction factors.
"""

import argparse
import json
import os
import subprocess
import sys
import time


def run_workload(n_sims: int, n_cycles: int, dt: float) -> dict:
    import numpy as np

    from cardiorom.onefiber import (USING_NUMBA, CorrectionFactors,
                                    default_parameters, run_simulation)

    params = default_parameters()
    # first call pays the JIT compilation; keep it out of the timing
    run_simulation(params, CorrectionFactors(), n_cycles=1, dt=dt)
    rng = np.random.default_rng(0)
    draws = 1.0 + 0.05 * rng.standard_normal((n_sims, 4))
    start = time.perf_counter()
    for row in draws:
        run_simulation(params, CorrectionFactors.from_array(row),
                       n_cycles=n_cycles, dt=dt)
    elapsed = time.perf_counter() - start
    return {"using_numba": USING_NUMBA, "total_s": elapsed,
            "per_sim_ms": 1000.0 * elapsed / n_sims}


def time_mode(flag: str, args) -> dict:
    env = dict(os.environ, CARDIOROM_NUMBA=flag)
    cmd = [sys.executable, __file__, "--worker",
           "--n-sims", str(args.n_sims), "--n-cycles", str(args.n_cycles),
           "--dt", str(args.dt)]
    out = subprocess.run(cmd, env=env, capture_output=True, text=True,
                         check=True)
    return json.loads(out.stdout.splitlines()[-1])


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n-sims", type=int, default=200)
    parser.add_argument("--n-cycles", type=int, default=6)
    parser.add_argument("--dt", type=float, default=2.0)
    parser.add_argument("--worker", action="store_true",
                        help="time the current process and print JSON")
    args = parser.parse_args()

    if args.worker:
        print(json.dumps(run_workload(args.n_sims, args.n_cycles, args.dt)))
        return 0

    print(f"{args.n_sims} simulations of {args.n_cycles} cycles at "
          f"dt={args.dt} ms")
    numba = time_mode("1", args)
    numpy_only = time_mode("0", args)
    if not numba["using_numba"]:
        print("numba unavailable; both runs used the numpy fallback")
    print(f"  numba:       {numba['total_s']:7.2f} s total, "
          f"{numba['per_sim_ms']:7.2f} ms/simulation")
    print(f"  numpy only:  {numpy_only['total_s']:7.2f} s total, "
          f"{numpy_only['per_sim_ms']:7.2f} ms/simulation")
    print(f"  speedup: {numpy_only['total_s'] / numba['total_s']:.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
