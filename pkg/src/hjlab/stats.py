"""Monte Carlo error bars over disorder samples."""

from __future__ import annotations

from typing import Callable, NamedTuple, Sequence

import numpy as np

DEFAULT_BATCHES = 50


class Estimate(NamedTuple):
    value: float
    se: float

    def within(self, target: float, k: float = 3.0) -> bool:
        return abs(self.value - target) <= k * self.se


def batch_jackknife(stat: Callable, columns: Sequence[np.ndarray],
                    n_batches: int = DEFAULT_BATCHES):
    """Delete-one-batch jackknife for a smooth function of sample means.

    ``columns`` are arrays whose first axis indexes disorder samples;
    ``stat`` receives their means (in the same order) and may be vectorized
    over any trailing axes. For a plain mean this reduces to the usual
    batch-means standard error. Returns ``(value, se)`` arrays; ``se`` is NaN
    with fewer than two samples.
    """
    columns = [np.asarray(c, dtype=float) for c in columns]
    n = columns[0].shape[0]
    value = np.asarray(stat(*[c.mean(axis=0) for c in columns]), dtype=float)
    if n < 2:
        return value, np.full_like(value, np.nan)
    b = min(n_batches, n)
    edges = np.linspace(0, n, b + 1).round().astype(int)
    sums = [c.sum(axis=0) for c in columns]
    reps = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        m = n - (hi - lo)
        means = [(s - c[lo:hi].sum(axis=0)) / m for s, c in zip(sums, columns)]
        reps.append(np.asarray(stat(*means), dtype=float))
    reps = np.stack(reps)
    se = np.sqrt((b - 1) / b * np.sum((reps - reps.mean(axis=0)) ** 2, axis=0))
    return value, se


def mean_estimate(x: np.ndarray, n_batches: int = DEFAULT_BATCHES):
    return batch_jackknife(lambda m: m, [x], n_batches)


def variance_estimate(x: np.ndarray, n_batches: int = DEFAULT_BATCHES):
    """Unbiased sample variance with a jackknife error bar."""
    n = np.asarray(x).shape[0]
    corr = n / (n - 1) if n > 1 else np.nan
    return batch_jackknife(lambda m1, m2: (m2 - m1 * m1) * corr, [x, np.square(x)], n_batches)


def loglog_slope(xs, ys) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    lx, ly = np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float))
    return float(np.polyfit(lx, ly, 1)[0])
