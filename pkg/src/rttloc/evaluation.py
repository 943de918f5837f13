"""Cross-validated evaluation of calibration + localization.

Targets are split into k folds; each fold's targets are localized with a
model calibrated only on the other folds' measurements, so no measurement
toward a target ever trains its own localization.  Reports collect per-target
errors plus the groupings needed for the standard analyses (error CDF, error
vs. landmark distance/count, ratio against the closest-landmark baseline).
"""

from __future__ import annotations

import csv
import enum
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .calibration import CalibrationSample, ModelKind, fit
from .geo import DEFAULT_BOUNDARY_POINTS, GeoPoint, great_circle_distance
from .localizer import (
    DiscardReason,
    LocalizationInput,
    NoLandmarksError,
    closest_landmark,
    localize,
    same_continent_filter,
)
from .measurement import BurstSummary, Continent, MeasurementRecord, summarize, validate
from .stats import median_lowmid
from .synth import UniformSphere, continent_of


@dataclass(frozen=True)
class FoldPlan:
    """Deterministic assignment of targets to folds (sizes differ by <= 1)."""

    k: int
    assignment: Mapping[str, int]

    @classmethod
    def make(cls, target_ids: Sequence[str], k: int, seed: int) -> "FoldPlan":
        ids = sorted(set(target_ids))
        if k < 2:
            raise ValueError("need at least 2 folds")
        if len(ids) < k:
            raise ValueError(f"{len(ids)} targets cannot fill {k} folds")
        rng = np.random.default_rng(seed)
        perm = rng.permutation(len(ids))
        return cls(k=k, assignment={ids[int(p)]: i % k for i, p in enumerate(perm)})

    def targets_in(self, fold: int) -> frozenset[str]:
        return frozenset(t for t, f in self.assignment.items() if f == fold)


@dataclass(frozen=True)
class TargetResult:
    target_id: str
    fold: int
    error_km: float
    closest_error_km: float
    n_landmarks: int
    avg_landmark_km: float
    n_used: int
    n_discarded: int
    n_fallback: int
    estimate: GeoPoint
    truth: GeoPoint


@dataclass(frozen=True)
class LocalizationFailure:
    target_id: str
    fold: int
    reason: str


@dataclass(frozen=True)
class FoldRecord:
    index: int
    train_targets: frozenset[str]
    eval_targets: frozenset[str]
    n_train_samples: int
    skipped: bool = False
    skip_reason: str = ""


@dataclass(frozen=True)
class EvaluationReport:
    model_kind: ModelKind
    k: int
    seed: int
    filter_km: float | None
    same_continent_only: bool
    results: tuple[TargetResult, ...]
    failures: tuple[LocalizationFailure, ...]
    folds: tuple[FoldRecord, ...]
    n_rejected_records: int

    @property
    def errors(self) -> list[float]:
        return [r.error_km for r in self.results]

    @property
    def median_error_km(self) -> float:
        return median_lowmid(self.errors)

    @property
    def closest_median_error_km(self) -> float:
        return median_lowmid([r.closest_error_km for r in self.results])

    def closest_results(self) -> tuple[TargetResult, ...]:
        """The same targets scored by the closest-landmark baseline."""
        return tuple(
            TargetResult(
                target_id=r.target_id,
                fold=r.fold,
                error_km=r.closest_error_km,
                closest_error_km=r.closest_error_km,
                n_landmarks=r.n_landmarks,
                avg_landmark_km=r.avg_landmark_km,
                n_used=1,
                n_discarded=0,
                n_fallback=0,
                estimate=r.estimate,
                truth=r.truth,
            )
            for r in self.results
        )

    def to_summary_dict(self) -> dict:
        return {
            "model": self.model_kind.value,
            "k": self.k,
            "seed": self.seed,
            "filter_km": self.filter_km,
            "same_continent_only": self.same_continent_only,
            "n_targets": len(self.results),
            "n_failures": len(self.failures),
            "n_rejected_records": self.n_rejected_records,
            "n_skipped_folds": sum(1 for f in self.folds if f.skipped),
            "median_error_km": self.median_error_km if self.results else None,
            "closest_median_error_km": self.closest_median_error_km if self.results else None,
        }


def _accepted_summaries(
    records: Sequence[MeasurementRecord],
) -> tuple[list[tuple[MeasurementRecord, BurstSummary]], int]:
    accepted = []
    rejected = 0
    for rec in records:
        if validate(rec) is None:
            accepted.append((rec, summarize(rec)))
        else:
            rejected += 1
    return accepted, rejected


def _dedupe_landmarks(summaries: list[BurstSummary]) -> tuple[BurstSummary, ...]:
    # repeated bursts from one landmark: keep the one with the smallest minimum
    best: dict[str, BurstSummary] = {}
    for s in summaries:
        cur = best.get(s.landmark_id)
        if cur is None or (s.min_rtt_ms, s.n_probes) < (cur.min_rtt_ms, cur.n_probes):
            best[s.landmark_id] = s
    return tuple(best[k] for k in sorted(best))


def cross_validate(
    records: Sequence[MeasurementRecord],
    model_kind: ModelKind,
    *,
    k: int = 10,
    seed: int = 0,
    degree: int = 3,
    filter_km: float | None = None,
    same_continent_only: bool = False,
    target_continents: Mapping[str, Continent] | None = None,
    n_points: int = DEFAULT_BOUNDARY_POINTS,
    min_sub_samples: int | None = None,
    jobs: int = 1,
) -> EvaluationReport:
    """Run k-fold cross-validation over calibration and localization.

    Records must carry ground-truth target positions.  ``target_continents``
    supplies the continent label per target for the continent-keyed models
    and the same-continent experiment; when omitted, labels are derived from
    the truth positions via fixed longitude bands.
    """
    accepted, n_rejected = _accepted_summaries(records)
    by_target: dict[str, list[tuple[MeasurementRecord, BurstSummary]]] = {}
    truth: dict[str, GeoPoint] = {}
    for rec, summ in accepted:
        if rec.target_pos is None:
            raise ValueError(f"record for {rec.target_id} has no ground-truth position")
        by_target.setdefault(rec.target_id, []).append((rec, summ))
        truth[rec.target_id] = rec.target_pos

    plan = FoldPlan.make(sorted(by_target), k, seed)
    continents = dict(target_continents) if target_continents else {
        tid: continent_of(pos, UniformSphere()) for tid, pos in truth.items()
    }

    results: list[TargetResult] = []
    failures: list[LocalizationFailure] = []
    folds: list[FoldRecord] = []
    fit_kwargs = {} if min_sub_samples is None else {"min_sub_samples": min_sub_samples}

    for fold_idx in range(k):
        eval_targets = plan.targets_in(fold_idx)
        train_targets = frozenset(by_target) - eval_targets
        train_samples = [
            CalibrationSample(
                min_rtt_ms=summ.min_rtt_ms,
                distance_km=great_circle_distance(summ.landmark_pos, truth[tid]),
                access_tech=summ.access_tech,
                same_continent=summ.continent is continents[tid],
            )
            for tid in sorted(train_targets)
            for _, summ in by_target[tid]
        ]
        try:
            model = fit(train_samples, model_kind, degree, **fit_kwargs)
        except ValueError as exc:
            folds.append(
                FoldRecord(fold_idx, train_targets, eval_targets, len(train_samples),
                           skipped=True, skip_reason=str(exc))
            )
            continue
        folds.append(FoldRecord(fold_idx, train_targets, eval_targets, len(train_samples)))

        def evaluate_target(tid: str):
            summaries = _dedupe_landmarks([s for _, s in by_target[tid]])
            inp = LocalizationInput(tid, summaries, target_continent=continents[tid])
            try:
                if same_continent_only:
                    inp = same_continent_filter(inp, continents[tid])
                result = localize(inp, model, filter_km=filter_km, n_points=n_points)
            except NoLandmarksError as exc:
                return LocalizationFailure(tid, fold_idx, str(exc))
            tpos = truth[tid]
            distances = [great_circle_distance(s.landmark_pos, tpos) for s in summaries]
            return TargetResult(
                target_id=tid,
                fold=fold_idx,
                error_km=great_circle_distance(result.estimate, tpos),
                closest_error_km=great_circle_distance(closest_landmark(inp), tpos),
                n_landmarks=len(summaries),
                avg_landmark_km=float(np.mean(distances)),
                n_used=len(result.used_landmarks),
                n_discarded=len(result.discarded),
                n_fallback=sum(
                    1 for _, reason in result.discarded
                    if reason is DiscardReason.MODEL_FALLBACK_EXCLUDED
                ),
                estimate=result.estimate,
                truth=tpos,
            )

        ordered = sorted(eval_targets)
        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                outcomes = list(pool.map(evaluate_target, ordered))
        else:
            outcomes = [evaluate_target(t) for t in ordered]
        for outcome in outcomes:
            if isinstance(outcome, LocalizationFailure):
                failures.append(outcome)
            else:
                results.append(outcome)

    return EvaluationReport(
        model_kind=model_kind,
        k=k,
        seed=seed,
        filter_km=filter_km,
        same_continent_only=same_continent_only,
        results=tuple(results),
        failures=tuple(failures),
        folds=tuple(folds),
        n_rejected_records=n_rejected,
    )


def error_cdf(errors: Sequence[float]) -> list[tuple[float, float]]:
    """Empirical CDF: one step per sorted error, fraction = rank / n."""
    if not errors:
        raise ValueError("no errors to summarize")
    ordered = sorted(errors)
    n = len(ordered)
    return [(e, (i + 1) / n) for i, e in enumerate(ordered)]


class GroupBy(str, enum.Enum):
    AVG_LANDMARK_DISTANCE = "avg_landmark_distance"
    LANDMARK_COUNT = "landmark_count"


@dataclass(frozen=True)
class GroupBin:
    lo: float
    hi: float
    count: int
    median_error_km: float | None


def _bin_edges(values: Sequence[float], bin_width: float) -> list[tuple[float, float]]:
    lo_idx = int(np.floor(min(values) / bin_width))
    hi_idx = int(np.floor(max(values) / bin_width))
    return [(i * bin_width, (i + 1) * bin_width) for i in range(lo_idx, hi_idx + 1)]


def grouped_error(
    results: Sequence[TargetResult],
    group_by: GroupBy,
    bin_width: float = 10.0,
) -> list[GroupBin]:
    """Median error per fixed-width bin of the grouping variable; empty bins
    are reported with count 0 and no median."""
    if not results:
        raise ValueError("no results to group")
    if bin_width <= 0.0:
        raise ValueError("bin width must be positive")
    if group_by is GroupBy.LANDMARK_COUNT:
        values = [float(r.n_landmarks) for r in results]
    else:
        values = [r.avg_landmark_km for r in results]
    bins = []
    for lo, hi in _bin_edges(values, bin_width):
        errors = [r.error_km for r, v in zip(results, values) if lo <= v < hi]
        bins.append(
            GroupBin(lo, hi, len(errors), median_lowmid(errors) if errors else None)
        )
    return bins


@dataclass(frozen=True)
class RatioBin:
    lo: float
    hi: float
    count: int
    ratio: float | None
    flagged: bool = False


def baseline_ratio(
    results_method: Sequence[TargetResult],
    results_closest: Sequence[TargetResult],
    bin_width: float = 10.0,
) -> list[RatioBin]:
    """Per-landmark-count bin: median(method error) / median(baseline error).

    Both result sets must cover the same targets.  Bins whose baseline median
    is zero are flagged instead of dividing.
    """
    method = {r.target_id: r for r in results_method}
    closest = {r.target_id: r for r in results_closest}
    if set(method) != set(closest):
        raise ValueError("method and baseline results cover different targets")
    if not method:
        raise ValueError("no results")
    counts = [float(r.n_landmarks) for r in method.values()]
    bins: list[RatioBin] = []
    for lo, hi in _bin_edges(counts, bin_width):
        ids = [tid for tid, r in method.items() if lo <= r.n_landmarks < hi]
        if not ids:
            bins.append(RatioBin(lo, hi, 0, None))
            continue
        med_method = median_lowmid([method[t].error_km for t in ids])
        med_closest = median_lowmid([closest[t].error_km for t in ids])
        if med_closest == 0.0:
            bins.append(RatioBin(lo, hi, len(ids), None, flagged=True))
        else:
            bins.append(RatioBin(lo, hi, len(ids), med_method / med_closest))
    return bins


def write_cdf_csv(path: str | Path, points: Sequence[tuple[float, float]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["error_km", "fraction"])
        for error, fraction in points:
            writer.writerow([repr(float(error)), repr(float(fraction))])


def write_grouped_csv(path: str | Path, bins: Sequence[GroupBin]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["bin_low", "bin_high", "count", "median_error_km"])
        for b in bins:
            writer.writerow(
                [
                    repr(float(b.lo)),
                    repr(float(b.hi)),
                    b.count,
                    "" if b.median_error_km is None else repr(float(b.median_error_km)),
                ]
            )


def write_ratio_csv(path: str | Path, bins: Sequence[RatioBin]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["bin_low", "bin_high", "ratio"])
        for b in bins:
            writer.writerow(
                [
                    repr(float(b.lo)),
                    repr(float(b.hi)),
                    "" if b.ratio is None else repr(float(b.ratio)),
                ]
            )


def write_summary_json(path: str | Path, summary: dict) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
