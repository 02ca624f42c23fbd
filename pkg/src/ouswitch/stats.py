"""Sample statistics used throughout the verification suites.

Kolmogorov-Smirnov distances are computed exactly by sweeping the merged
support (no binning); ties are handled by evaluating ECDF differences at
right limits of tied blocks.
"""

from __future__ import annotations

import csv
from typing import Callable, Iterable

import numpy as np

from .errors import EmptySample


class SampleSet:
    """A validated batch of real observations, uniformly weighted.

    NaN/inf values are rejected at ingestion; sorting is cached.
    """

    def __init__(self, values: Iterable[float]):
        arr = np.asarray(values, dtype=float).ravel()
        if arr.size == 0:
            raise EmptySample("sample is empty")
        if not np.all(np.isfinite(arr)):
            raise ValueError("sample contains non-finite values")
        self.values = arr
        self._sorted: np.ndarray | None = None

    def __len__(self) -> int:
        return self.values.size

    @property
    def sorted_values(self) -> np.ndarray:
        if self._sorted is None:
            self._sorted = np.sort(self.values)
        return self._sorted


def _coerce(x) -> SampleSet:
    return x if isinstance(x, SampleSet) else SampleSet(x)


def ks_two_sample(x, y) -> tuple[float, float]:
    """Exact two-sample KS distance and its sqrt(nm/(n+m)) scaling.

    The sup of |F_x - F_y| over the merged support, with ECDFs evaluated
    at right limits so tied blocks are treated exactly.
    """
    xs = _coerce(x).sorted_values
    ys = _coerce(y).sorted_values
    n, m = xs.size, ys.size
    grid = np.concatenate([xs, ys])
    fx = np.searchsorted(xs, grid, side="right") / n
    fy = np.searchsorted(ys, grid, side="right") / m
    d = float(np.max(np.abs(fx - fy)))
    return d, d * np.sqrt(n * m / (n + m))


def ks_one_sample(x, cdf: Callable[[np.ndarray], np.ndarray]) -> float:
    """Exact one-sample KS distance against a monotone CDF callable."""
    xs = _coerce(x).sorted_values
    n = xs.size
    f = np.asarray(cdf(xs), dtype=float)
    i = np.arange(1, n + 1)
    d_plus = np.max(i / n - f)
    d_minus = np.max(f - (i - 1) / n)
    return float(max(d_plus, d_minus, 0.0))


def moments_with_se(x, m: int) -> tuple[float, float]:
    """m-th raw moment with the standard error of its sample mean."""
    if m < 1:
        raise ValueError("moment order must be >= 1")
    v = _coerce(x).values
    p = v.astype(float) ** m
    est = float(np.mean(p))
    if p.size == 1:
        return est, float("nan")
    se = float(np.std(p, ddof=1) / np.sqrt(p.size))
    return est, se


def histogram_csv(x, n_bins: int, path) -> None:
    """Write a (bin_left, bin_right, count) histogram CSV."""
    v = _coerce(x).values
    counts, edges = np.histogram(v, bins=n_bins)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_left", "bin_right", "count"])
        for k in range(n_bins):
            w.writerow([repr(float(edges[k])), repr(float(edges[k + 1])), int(counts[k])])
