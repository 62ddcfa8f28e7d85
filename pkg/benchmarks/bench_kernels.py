"""Benchmark the compiled Riccati kernel against the pure-numpy fallback.

Two views: the raw backward RK4 sweep at the dimensions the solver actually
uses, and one full mean-field consistency solve on the bundled two-state
scenario (the sweep dominates its runtime).

    python3 benchmarks/bench_kernels.py
"""

import time

import numpy as np

import hsmfg.riccati
from hsmfg import _kernels_py

try:
    from hsmfg import _kernels
except ImportError:
    _kernels = None


def time_call(fn, repeat=5):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_raw_sweep():
    print("raw backward sweep (3600 RK4 steps, 18s horizon at dt=0.01)")
    print(f"{'dim':>4} {'numpy':>10} {'cython':>10} {'speedup':>8}")
    for d in (2, 4, 6, 8):
        rng = np.random.default_rng(d)
        A = np.ascontiguousarray(rng.normal(size=(7201, d, d)) * 0.1)
        B = rng.normal(size=(d, 1))
        S = np.ascontiguousarray(B @ B.T)
        P = np.eye(d)
        Pe = np.zeros((d, d))
        t_py = time_call(lambda: _kernels_py.rk4_riccati_sweep(
            A, S, P, Pe, 0.005))
        if _kernels is None:
            print(f"{d:>4} {t_py * 1e3:>9.2f}ms {'n/a':>10}")
            continue
        t_cy = time_call(lambda: _kernels.rk4_riccati_sweep(
            A, S, P, Pe, 0.005))
        out_py, _ = _kernels_py.rk4_riccati_sweep(A, S, P, Pe, 0.005)
        out_cy, _ = _kernels.rk4_riccati_sweep(A, S, P, Pe, 0.005)
        err = np.max(np.abs(out_py - out_cy))
        print(f"{d:>4} {t_py * 1e3:>9.2f}ms {t_cy * 1e3:>9.2f}ms "
              f"{t_py / t_cy:>7.1f}x   (max diff {err:.1e})")


def bench_consistency_solve():
    from hsmfg.scenario import load_scenario
    from hsmfg.meanfield import solve_consistency

    sc = load_scenario("paper_sec4")
    aut = sc.automaton()

    def run():
        solve_consistency(aut, ["q1_ab"], [], sc.T, sc.dt)

    print("\nfull consistency solve (bundled scenario, two-population mode)")
    backends = [("numpy", _kernels_py.rk4_riccati_sweep)]
    if _kernels is not None:
        backends.append(("cython", _kernels.rk4_riccati_sweep))
    times = {}
    for name, kern in backends:
        hsmfg.riccati.rk4_riccati_sweep = kern
        times[name] = time_call(run, repeat=2)
        print(f"  {name:>7}: {times[name]:.2f}s")
    if len(times) == 2:
        print(f"  speedup: {times['numpy'] / times['cython']:.1f}x")


if __name__ == "__main__":
    bench_raw_sweep()
    bench_consistency_solve()
