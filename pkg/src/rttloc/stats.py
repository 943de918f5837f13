"""Small statistics helpers shared across modules."""

from __future__ import annotations

from typing import Sequence

import numpy as np


def median_lowmid(values: Sequence[float]) -> float:
    """Median taking the lower-middle element for even-sized input.

    Deterministic and always an actual data point, which keeps reported
    medians reproducible across runs and platforms.
    """
    if len(values) == 0:
        raise ValueError("median of empty sequence")
    ordered = sorted(values)
    return float(ordered[(len(ordered) - 1) // 2])


def population_std(values: Sequence[float]) -> float:
    if len(values) == 0:
        raise ValueError("std of empty sequence")
    return float(np.std(np.asarray(values, dtype=float)))


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=float)
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman rank correlation with average ranks for ties."""
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    if xa.shape != ya.shape or xa.size < 2:
        raise ValueError("need two equal-length sequences of size >= 2")
    rx = _average_ranks(xa)
    ry = _average_ranks(ya)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = float(np.sqrt((rx @ rx) * (ry @ ry)))
    if denom == 0.0:
        raise ValueError("rank variance is zero")
    return float((rx @ ry) / denom)


def bootstrap_median_ci(
    values: Sequence[float],
    n_boot: int = 1000,
    seed: int = 0,
    alpha: float = 0.05,
) -> tuple[float, float]:
    """Seed-fixed percentile bootstrap interval for the (lower-middle) median."""
    data = np.asarray(values, dtype=float)
    if data.size == 0:
        raise ValueError("bootstrap of empty sequence")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, data.size, size=(n_boot, data.size))
    samples = np.sort(data[idx], axis=1)[:, (data.size - 1) // 2]
    lo, hi = np.quantile(samples, [alpha / 2.0, 1.0 - alpha / 2.0])
    return float(lo), float(hi)
