"""Reproducible parallel Monte Carlo engine.

Streams are counter-based: the (master seed, task name, sample index)
triple is hashed into a 128-bit Philox key, so any sample's generator can
be reconstructed in O(1) regardless of execution order or worker count.
Estimates are reduced in sample-index order, which makes results
bit-identical across parallelism levels.
"""

from __future__ import annotations

import hashlib
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

__all__ = [
    "EstimatorResult",
    "SeedPlan",
    "MIN_BATCHES",
    "batch_stats",
    "run_estimator",
    "ks_statistic",
    "spearman_rho",
    "monotone_trend_pvalue",
]

MIN_BATCHES = 16


@dataclass(frozen=True)
class EstimatorResult:
    estimate: float
    stderr: float
    n_samples: int
    seed: int

    def agrees_with(self, other: "EstimatorResult", k: float = 3.0) -> bool:
        """|estimates| differ by less than k combined standard errors."""
        band = k * math.hypot(self.stderr, other.stderr)
        return abs(self.estimate - other.estimate) <= band


@dataclass(frozen=True)
class SeedPlan:
    """Derivation rule from (master, task, index) to independent streams."""

    master_seed: int

    def key(self, task: str, index: int) -> np.ndarray:
        payload = f"{self.master_seed}:{task}:{index}".encode()
        digest = hashlib.blake2b(payload, digest_size=16).digest()
        return np.frombuffer(digest, dtype=np.uint64)

    def bit_generator(self, task: str, index: int, jump: int = 0):
        bg = np.random.Philox(key=self.key(task, index))
        return bg.jumped(jump) if jump else bg

    def generator(self, task: str, index: int, jump: int = 0) -> np.random.Generator:
        """Independent stream for one sample; ``jump`` selects substreams."""
        return np.random.Generator(self.bit_generator(task, index, jump))


def batch_stats(values, batches: int = MIN_BATCHES, seed: int = 0) -> EstimatorResult:
    """Mean and batch-means standard error of an i.i.d. sample array."""
    values = np.asarray(values, dtype=float)
    n = values.size
    if batches < MIN_BATCHES:
        raise ValueError(f"need at least {MIN_BATCHES} batches, got {batches}")
    if n % batches != 0:
        raise ValueError(f"n_samples={n} not divisible by batches={batches}")
    means = values.reshape(batches, -1).mean(axis=1)
    stderr = float(means.std(ddof=1) / math.sqrt(batches))
    return EstimatorResult(float(values.mean()), stderr, n, seed)


def run_estimator(
    task,
    n_samples: int,
    batches: int = MIN_BATCHES,
    plan: SeedPlan = SeedPlan(0),
    task_name: str = "task",
    workers: int = 1,
) -> EstimatorResult:
    """Monte Carlo mean of ``task(index, rng)`` over derived streams.

    The sample array is filled by index, so the estimate does not depend
    on the worker count; non-finite sample values raise with the index.
    """
    values = np.empty(n_samples, dtype=float)

    def fill(lo_hi):
        lo, hi = lo_hi
        for i in range(lo, hi):
            values[i] = task(i, plan.generator(task_name, i))

    if workers <= 1:
        fill((0, n_samples))
    else:
        step = -(-n_samples // workers)
        spans = [(lo, min(lo + step, n_samples)) for lo in range(0, n_samples, step)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fill, spans))
    bad = np.nonzero(~np.isfinite(values))[0]
    if bad.size:
        raise ValueError(f"task '{task_name}' returned non-finite value at sample {bad[0]}")
    return batch_stats(values, batches, seed=plan.master_seed)


def ks_statistic(samples, cdf) -> float:
    """sup_x |empirical CDF - cdf(x)| over the sample points."""
    xs = np.sort(np.asarray(samples, dtype=float))
    n = xs.size
    if n == 0:
        raise ValueError("ks_statistic needs a nonempty sample")
    f = np.asarray(cdf(xs), dtype=float)
    grid = np.arange(1, n + 1) / n
    d_plus = np.max(grid - f)
    d_minus = np.max(f - (grid - 1.0 / n))
    return float(max(d_plus, d_minus))


def spearman_rho(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    rx = np.argsort(np.argsort(x)).astype(float)
    ry = np.argsort(np.argsort(y)).astype(float)
    rx -= rx.mean()
    ry -= ry.mean()
    return float(np.dot(rx, ry) / math.sqrt(np.dot(rx, rx) * np.dot(ry, ry)))


def monotone_trend_pvalue(values, direction: str = "decreasing") -> float:
    """One-sided Spearman rank test against index order.

    Exact permutation p-value for short sequences (n <= 8), normal
    approximation beyond.  ``direction='decreasing'`` tests whether the
    sequence trends down with its index.
    """
    v = np.asarray(values, dtype=float)
    n = v.size
    if n < 3:
        raise ValueError("trend test needs at least 3 points")
    idx = np.arange(n, dtype=float)
    sign = -1.0 if direction == "decreasing" else 1.0
    rho_obs = sign * spearman_rho(idx, v)
    if n <= 8:
        count = 0
        total = 0
        for perm in itertools.permutations(range(n)):
            total += 1
            if sign * spearman_rho(idx, np.take(v, perm)) >= rho_obs - 1e-12:
                count += 1
        return count / total
    z = rho_obs * math.sqrt(n - 1)
    return float(0.5 * math.erfc(z / math.sqrt(2.0)))
