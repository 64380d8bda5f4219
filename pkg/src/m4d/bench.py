"""Scaling benchmark: linear-time scans vs. the quadratic attention baseline.

Each (kernel, L) pair yields one record line

    kernel=<name> L=<int> d=<int> wall_ns=<int> peak_bytes=<int>

wall time is the median of `repeats` runs after one warmup; peak_bytes is
the tracemalloc high-water mark of a single run. A least-squares log-log
fit of wall time against L gives the complexity slope per kernel.
"""
from __future__ import annotations

import time
import tracemalloc
from dataclasses import dataclass

import numpy as np

from . import ssm

KERNELS = ("ssm_seq", "ssm_par", "attention")
DEFAULT_LENGTHS = (256, 512, 1024, 2048, 4096, 8192)


@dataclass
class BenchRecord:
    kernel: str
    L: int
    d: int
    wall_ns: int
    peak_bytes: int

    def line(self):
        return (f"kernel={self.kernel} L={self.L} d={self.d} "
                f"wall_ns={self.wall_ns} peak_bytes={self.peak_bytes}")


def _make_runner(kernel, L, d, rng):
    x = rng.standard_normal((L, d))
    if kernel == "attention":
        W = [rng.normal(0, 0.1, (d, d)) for _ in range(3)]
        return lambda: ssm.attention_reference(x, *W)
    params = ssm.init_ssm_params(d, rng=rng)
    if kernel == "ssm_seq":
        return lambda: ssm.selective_scan_sequential(params, x)
    if kernel == "ssm_par":
        return lambda: ssm.selective_scan_parallel(params, x)
    raise ValueError(f"unknown kernel {kernel!r}")


def run_bench(lengths=DEFAULT_LENGTHS, kernels=KERNELS, d=32, repeats=5,
              warmup=1, seed=0):
    """One BenchRecord per (kernel, L); single-threaded by construction."""
    for k in kernels:
        if k not in KERNELS:
            raise ValueError(f"unknown kernel {k!r}")
    records = []
    for kernel in kernels:
        for L in lengths:
            run = _make_runner(kernel, L, d, np.random.default_rng(seed))
            for _ in range(warmup):
                run()
            times = []
            for _ in range(repeats):
                t0 = time.perf_counter_ns()
                run()
                times.append(time.perf_counter_ns() - t0)
            tracemalloc.start()
            tracemalloc.reset_peak()
            run()
            _, peak = tracemalloc.get_traced_memory()
            tracemalloc.stop()
            records.append(BenchRecord(kernel=kernel, L=L, d=d,
                                       wall_ns=int(np.median(times)),
                                       peak_bytes=int(peak)))
    return records


def fit_slopes(records):
    """kernel -> least-squares slope of log(wall_ns) vs log(L)."""
    out = {}
    for kernel in dict.fromkeys(r.kernel for r in records):
        pts = [(r.L, r.wall_ns) for r in records if r.kernel == kernel]
        logL = np.log([p[0] for p in pts])
        logT = np.log([p[1] for p in pts])
        out[kernel] = float(np.polyfit(logL, logT, 1)[0])
    return out


def peak_ratio(records, L, num="attention", den="ssm_par"):
    peaks = {r.kernel: r.peak_bytes for r in records if r.L == L}
    if num not in peaks or den not in peaks:
        raise ValueError(f"no records for kernels {num!r}/{den!r} at L={L}")
    return peaks[num] / peaks[den]
