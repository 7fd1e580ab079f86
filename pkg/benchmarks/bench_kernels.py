"""Wall-clock comparison of the numba and numpy mode-integration drivers.

    python3 benchmarks/bench_kernels.py [--modes 200 800] [--repeat 3]
"""
import argparse
import time

import numpy as np

from dampwave import _kernels
from dampwave.coeffcalc import make_profile
from dampwave.modes import solve_modes

CASES = {
    "noneffective": (("power", {"c": 0.5, "alpha": -1}), ("exp", {"c": 0.5, "alpha": -1}), 100.0),
    "scattering": (("power", {"c": 1, "alpha": -2}), ("exp", {"c": 1, "alpha": 1}), 10.0),
    "doubleexp_b": (("doubleexp", {"c": 1, "sign": 1}), ("exp", {"c": 2, "alpha": -1}), 3.0),
}


def run(case, modes, backend, t_points=201):
    (bf, bp), (gf, gp), horizon = CASES[case]
    b, g = make_profile(bf, bp), make_profile(gf, gp)
    xis = np.geomspace(0.1, 10.0, modes)
    t = np.linspace(0.0, horizon, t_points)
    t0 = time.perf_counter()
    sols = solve_modes(b, g, xis, 1.0, 1.0, t, rel_tol=1e-8, backend=backend)
    return time.perf_counter() - t0, sols


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--modes", type=int, nargs="+", default=[200, 800])
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--cases", nargs="+", default=list(CASES), choices=list(CASES))
    args = parser.parse_args()

    if not _kernels.NUMBA_AVAILABLE:
        print("numba not importable; only the numpy driver is timed")
    backends = ["numba", "numpy"] if _kernels.NUMBA_AVAILABLE else ["numpy"]
    if "numba" in backends:
        t0 = time.perf_counter()
        run("scattering", 2, "numba")
        print(f"numba warm-up (compile or cache load): {time.perf_counter() - t0:.2f} s")

    print(f"{'case':14s} {'modes':>6s} {'backend':>8s} {'best s':>9s} {'steps':>9s} {'max |diff|':>11s}")
    for case in args.cases:
        for m in args.modes:
            best, sols = {}, {}
            for be in backends:
                times = []
                for _ in range(args.repeat):
                    dt, s = run(case, m, be)
                    times.append(dt)
                best[be], sols[be] = min(times), s
            for be in backends:
                steps = sum(s.steps for s in sols[be])
                diff = ""
                if be == "numpy" and "numba" in sols:
                    d = max(float(np.max(np.abs(a.u_hat - c.u_hat))) for a, c in zip(sols["numba"], sols["numpy"]))
                    diff = f"{d:.1e}"
                print(f"{case:14s} {m:6d} {be:>8s} {best[be]:9.3f} {steps:9d} {diff:>11s}")
            if len(backends) == 2:
                print(f"{'':14s} {'':6s} {'speedup':>8s} {best['numpy'] / best['numba']:9.1f}x")


if __name__ == "__main__":
    main()
