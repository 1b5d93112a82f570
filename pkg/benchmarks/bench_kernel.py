"""Benchmark the compiled RDP kernel against the pure-numpy fallback.

Runs both implementations on the workloads that dominate real use — the
small bucket-cache fill, the large exact-reference matrix, and the
calibration loop's single-row calls — and reports wall time, throughput,
and the worst relative disagreement between the two backends.

Usage: python3 benchmarks/bench_kernel.py [--rows N]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from idpacct import _kernel_numpy
from idpacct.rdp_math import default_orders

try:
    from idpacct import _kernel_cy
except ImportError:
    _kernel_cy = None


def _agreement(a: np.ndarray, b: np.ndarray) -> float:
    both_zero = (a == 0) & (b == 0)
    both_inf = np.isinf(a) & np.isinf(b)
    ok = both_zero | both_inf
    denom = np.where(ok, 1.0, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.where(ok, 0.0, np.abs(a - b) / denom)))


def _time(fn, *args, repeats: int = 3) -> tuple[float, np.ndarray]:
    best, out = float("inf"), None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def run(rows: int) -> None:
    orders = default_orders()
    rng = np.random.default_rng(0)
    workloads = {
        "bucket cache (100 curves)": (0.05, np.linspace(1.0, 100.0, 100)),
        f"exact reference ({rows} rows)": (0.05, rng.uniform(0.5, 50.0, rows)),
        "calibration row (x1000 calls)": (0.05, np.asarray([1.7])),
    }
    if _kernel_cy is None:
        print("compiled kernel unavailable; timing numpy backend only")
    header = f"{'workload':<34}{'numpy':>12}{'compiled':>12}{'speedup':>9}{'max rel diff':>14}"
    print(header)
    print("-" * len(header))
    for name, (q, mults) in workloads.items():
        repeats = 1000 if "calibration" in name else 3
        if repeats == 1000:
            def np_fn():
                for _ in range(1000):
                    _kernel_numpy.sgm_rdp_matrix(q, mults, orders)
            t_np, _ = _time(np_fn, repeats=1)
            out_np = _kernel_numpy.sgm_rdp_matrix(q, mults, orders)
        else:
            t_np, out_np = _time(_kernel_numpy.sgm_rdp_matrix, q, mults, orders)
        if _kernel_cy is None:
            print(f"{name:<34}{t_np:>11.3f}s{'-':>12}{'-':>9}{'-':>14}")
            continue
        if repeats == 1000:
            def cy_fn():
                for _ in range(1000):
                    _kernel_cy.sgm_rdp_matrix(q, mults, orders)
            t_cy, _ = _time(cy_fn, repeats=1)
            out_cy = _kernel_cy.sgm_rdp_matrix(q, mults, orders)
        else:
            t_cy, out_cy = _time(_kernel_cy.sgm_rdp_matrix, q, mults, orders)
        diff = _agreement(np.asarray(out_np), np.asarray(out_cy))
        print(f"{name:<34}{t_np:>11.3f}s{t_cy:>11.3f}s{t_np / t_cy:>8.2f}x{diff:>14.2e}")


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--rows", type=int, default=100_000,
                        help="row count for the large workload (default 100000)")
    run(parser.parse_args().rows)
