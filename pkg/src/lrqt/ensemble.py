"""Statistics across independent estimator realizations."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np


class RealizationError(RuntimeError):
    def __init__(self, index: int, cause: BaseException):
        super().__init__(f"realization {index} failed: {cause!r}")
        self.index = index


@dataclass(frozen=True)
class EnsembleStats:
    """Mean and unbiased variance across realizations (scalars or arrays)."""

    n_realizations: int
    mean: np.ndarray | float
    variance: np.ndarray | float
    std_error: np.ndarray | float

    @classmethod
    def from_values(cls, values) -> "EnsembleStats":
        values = np.asarray(values, dtype=float)
        n = values.shape[0]
        if n < 2:
            raise ValueError("need at least two realizations for a sample variance")
        mean = values.mean(axis=0)
        var = values.var(axis=0, ddof=1)
        se = np.sqrt(var / n)
        if values.ndim == 1:
            return cls(n, float(mean), float(var), float(se))
        return cls(n, mean, var, se)


def run_ensemble(experiment: Callable[[int, int], object], n: int, seed: int,
                 threads: int = 1) -> tuple[EnsembleStats, np.ndarray]:
    """Run ``experiment(seed, k)`` for k = 0..n-1 and collect statistics.

    Results are ordered by k whatever the completion order, so the output is
    identical for any ``threads``.
    """
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")

    def one(k):
        try:
            return k, np.asarray(experiment(seed, k), dtype=float)
        except Exception as exc:  # noqa: BLE001 - re-raised with the index
            raise RealizationError(k, exc) from exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(n)))
    else:
        results = [one(k) for k in range(n)]
    results.sort(key=lambda kv: kv[0])
    raw = np.stack([v for _, v in results])
    return EnsembleStats.from_values(raw), raw


def fit_power_law(xs, ys) -> tuple[float, float]:
    """Least-squares line through (log x, log y); returns (slope, intercept)."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.size < 3:
        raise ValueError("need at least three (x, y) pairs of equal length")
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise ValueError("power-law fit requires strictly positive x and y")
    slope, intercept = np.polyfit(np.log(xs), np.log(ys), 1)
    return float(slope), float(intercept)
