"""Wall-clock scaling of the linear and quadratic attention paths.

The quadratic path is timed through ``quadratic_output``, which forms the
explicit score matrix one block of query rows at a time: the arithmetic is
the full M×N evaluation, only the peak memory is bounded (a 16384² float64
score matrix alone would be 2 GiB).
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .mala import mala_linear, mala_scalars, phi
from .tensor import make_rng

DEFAULT_SIZES = (1024, 2048, 4096, 8192, 16384)


def quadratic_output(q, k, v, block_rows: int = 512):
    """``Y`` of the explicit-score path, evaluated in row blocks."""
    fq, fk = phi(q), phi(k)
    sc = mala_scalars(fq, fk.sum(axis=0), k.shape[0])
    out = np.empty((q.shape[0], v.shape[1]), dtype=np.result_type(q, v))
    for i in range(0, q.shape[0], block_rows):
        rows = slice(i, i + block_rows)
        a = fq[rows] @ fk.T
        a *= sc.beta[rows, None]
        a -= sc.gamma[rows, None]
        out[rows] = a @ v
    return out


MODES = {"linear": mala_linear, "quadratic": quadratic_output}


@dataclass(frozen=True)
class BenchRow:
    n: int
    mode: str
    median_ns: float

    @property
    def per_token_ns(self) -> float:
        return self.median_ns / self.n


def median_time_ns(fn, reps: int = 20, warmup: int = 2, min_rep_ns: float = 2e6) -> float:
    """Median over ``reps`` of the per-call time; fast calls are looped so one rep lasts ``min_rep_ns``."""
    for _ in range(warmup):
        fn()
    t0 = time.perf_counter_ns()
    fn()
    single = max(time.perf_counter_ns() - t0, 1)
    number = max(1, int(min_rep_ns // single))
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter_ns()
        for _ in range(number):
            fn()
        samples.append((time.perf_counter_ns() - t0) / number)
    return float(np.median(samples))


def make_inputs(n: int, d: int, dv: int, seed: int, dtype=np.float64):
    rng = make_rng(seed)
    return tuple(rng.standard_normal((n, w)).astype(dtype) for w in (d, d, dv))


def correctness_gate(sizes, d: int, dv: int, seed: int = 0) -> float:
    """Largest max-abs deviation (relative to max |Y|) between the two paths in float64."""
    worst = 0.0
    for n in sizes:
        q, k, v = make_inputs(n, d, dv, seed + n)
        lin = mala_linear(q, k, v)
        quad = quadratic_output(q, k, v)
        worst = max(worst, float(np.abs(lin - quad).max() / np.abs(quad).max()))
    return worst


def run_benchmark(sizes=DEFAULT_SIZES, d: int = 16, dv: int = 16, reps: int = 20, warmup: int = 2,
                  modes=("linear", "quadratic"), dtype=np.float32, seed: int = 0) -> list[BenchRow]:
    rows = []
    for mode in modes:
        fn = MODES[mode]
        for n in sizes:
            q, k, v = make_inputs(n, d, dv, seed + n, dtype)
            rows.append(BenchRow(n, mode, median_time_ns(lambda: fn(q, k, v), reps, warmup)))
    return rows


def doubling_ratios(rows: list[BenchRow], mode: str) -> list[float]:
    times = sorted((r.n, r.median_ns) for r in rows if r.mode == mode)
    return [t2 / t1 for (n1, t1), (n2, t2) in zip(times, times[1:]) if n2 == 2 * n1]
