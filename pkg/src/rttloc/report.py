"""Render evaluation and calibration figures to files.

Companion to the CSV artifacts: every figure is drawn from the same data the
delimited files carry.  Uses the Agg backend so rendering works headless, and
strips volatile PNG metadata so repeated runs produce identical bytes.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .calibration import BinDiagnostics, CalibrationSample, DelayDistanceModel
from .evaluation import GroupBin, RatioBin

_PNG_META = {"Software": None}


def _save(fig, path: str | Path) -> None:
    fig.savefig(path, dpi=150, metadata=_PNG_META)
    plt.close(fig)


def save_cdf_figure(
    path: str | Path,
    curves: Mapping[str, Sequence[tuple[float, float]]],
    title: str = "Localization error CDF",
) -> None:
    """Overlay one empirical CDF per labeled curve."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for label in sorted(curves):
        points = curves[label]
        xs = [e for e, _ in points]
        ys = [f for _, f in points]
        ax.step(xs, ys, where="post", label=label)
    ax.set_xlabel("error (km)")
    ax.set_ylabel("cumulative fraction")
    ax.set_ylim(0.0, 1.02)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    _save(fig, path)


def save_grouped_figure(
    path: str | Path,
    bins: Sequence[GroupBin],
    xlabel: str,
    title: str,
) -> None:
    """Median error per bin, drawn at bin centers; empty bins are skipped."""
    populated = [b for b in bins if b.count and b.median_error_km is not None]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    if populated:
        xs = [(b.lo + b.hi) / 2.0 for b in populated]
        ys = [b.median_error_km for b in populated]
        ax.plot(xs, ys, marker="o")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("median error (km)")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    _save(fig, path)


def save_ratio_figure(
    path: str | Path,
    bins: Sequence[RatioBin],
    title: str = "Median error ratio vs closest landmark",
) -> None:
    populated = [b for b in bins if b.count and b.ratio is not None]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    if populated:
        xs = [(b.lo + b.hi) / 2.0 for b in populated]
        ys = [b.ratio for b in populated]
        ax.plot(xs, ys, marker="o")
    ax.axhline(1.0, color="gray", linestyle="--", linewidth=1)
    ax.set_xlabel("landmarks involved")
    ax.set_ylabel("median error ratio")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    _save(fig, path)


def save_calibration_figure(
    path: str | Path,
    samples: Sequence[CalibrationSample],
    model: DelayDistanceModel,
    diagnostics: BinDiagnostics | None = None,
    title: str = "Delay-distance calibration",
) -> None:
    """Scatter of the training data with per-bin medians and the fitted
    global curve (clamped beyond its cutoff)."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    delays = np.array([s.min_rtt_ms for s in samples])
    dists = np.array([s.distance_km for s in samples])
    ax.scatter(delays, dists, s=4, alpha=0.25, label="bursts", rasterized=True)
    if diagnostics is not None:
        mids = [(b.delay_lo_ms + b.delay_hi_ms) / 2.0 for b in diagnostics.bins]
        meds = [b.median_distance_km for b in diagnostics.bins]
        stds = [b.std_distance_km for b in diagnostics.bins]
        ax.errorbar(mids, meds, yerr=stds, fmt="s", color="crimson",
                    markersize=4, capsize=3, label="bin median ± std")
    if delays.size:
        grid = np.linspace(float(delays.min()), float(delays.max()) * 1.1, 400)
        ax.plot(grid, model.fallback.evaluate(grid), color="black", label="fitted model")
    ax.set_xlabel("minimum RTT (ms)")
    ax.set_ylabel("distance (km)")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    _save(fig, path)
