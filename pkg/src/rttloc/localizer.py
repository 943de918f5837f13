"""Target localization by ordered intersection of per-landmark distance caps.

Each landmark's minimum RTT is converted to a distance estimate, which
defines a spherical cap around the landmark.  Caps are applied smallest
first; a cap that cannot intersect the running region is treated as a bad
measurement and skipped rather than enforced.  The centroid of the final
region is the position estimate.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .calibration import DelayDistanceModel
from .geo import (
    DEFAULT_BOUNDARY_POINTS,
    GEO_TOLERANCE_KM,
    GeoPoint,
    Region,
    SphericalCap,
    barycenter,
    great_circle_distance,
    intersect,
    polygon_area_km2,
)
from .measurement import BurstSummary, Continent

THIN_REGION_KM2 = 100.0  # below this the region is a sliver; centroid may sit outside


class DiscardReason(str, enum.Enum):
    EMPTY_INTERSECTION = "empty_intersection"
    FILTERED_DISTANCE = "filtered_distance"
    MODEL_FALLBACK_EXCLUDED = "model_fallback_excluded"


class NoLandmarksError(ValueError):
    """Every landmark was filtered out; nothing to intersect."""


@dataclass(frozen=True)
class LocalizationInput:
    target_id: str
    summaries: tuple[BurstSummary, ...]
    target_continent: Continent | None = None

    def __post_init__(self) -> None:
        if not self.summaries:
            raise NoLandmarksError(f"no landmark summaries for {self.target_id}")
        ids = [s.landmark_id for s in self.summaries]
        if len(set(ids)) != len(ids):
            raise ValueError("landmark ids must be distinct")


@dataclass(frozen=True)
class RegionDiagnostics:
    vertex_count: int
    area_km2: float
    single_landmark_radius_km: float | None = None
    flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class LocalizationResult:
    """Estimate plus bookkeeping.

    ``used_landmarks`` lists caps that shaped the final region, in the order
    they were applied.  ``discarded`` pairs landmark ids with the reason they
    were dropped; a ``model_fallback_excluded`` entry only annotates that the
    landmark's distance came from the global fallback fit — the landmark
    still participates.
    """

    target_id: str
    estimate: GeoPoint
    used_landmarks: tuple[str, ...]
    discarded: tuple[tuple[str, DiscardReason], ...]
    diagnostics: RegionDiagnostics
    region: Region | None = field(repr=False, default=None)


def localize(
    inp: LocalizationInput,
    model: DelayDistanceModel,
    filter_km: float | None = None,
    n_points: int = DEFAULT_BOUNDARY_POINTS,
) -> LocalizationResult:
    """Estimate the target position from landmark burst summaries.

    Steps: estimate one distance per landmark from the model; optionally drop
    landmarks whose estimated distance exceeds ``filter_km``; build caps and
    sort them by radius (ties by landmark id); intersect incrementally,
    skipping caps that would empty the region; return the region centroid.

    Raises NoLandmarksError when filtering leaves nothing.
    """
    discarded: list[tuple[str, DiscardReason]] = []
    caps: list[SphericalCap] = []
    for summary in sorted(inp.summaries, key=lambda s: s.landmark_id):
        same_continent = (
            None if inp.target_continent is None else summary.continent is inp.target_continent
        )
        fit, fell_back = model.select(summary.access_tech, same_continent)
        radius = fit.evaluate(summary.min_rtt_ms)
        if fell_back:
            discarded.append((summary.landmark_id, DiscardReason.MODEL_FALLBACK_EXCLUDED))
        if filter_km is not None and radius > filter_km:
            discarded.append((summary.landmark_id, DiscardReason.FILTERED_DISTANCE))
            continue
        caps.append(SphericalCap(summary.landmark_pos, radius, summary.landmark_id))

    if not caps:
        raise NoLandmarksError(
            f"all landmarks for {inp.target_id} were filtered out (threshold {filter_km} km)"
        )
    caps.sort(key=lambda c: (c.radius_km, c.landmark_id))

    if len(caps) == 1:
        only = caps[0]
        return LocalizationResult(
            target_id=inp.target_id,
            estimate=only.center,
            used_landmarks=(only.landmark_id,),
            discarded=tuple(discarded),
            diagnostics=RegionDiagnostics(
                vertex_count=0,
                area_km2=0.0,
                single_landmark_radius_km=only.radius_km,
                flags=("single_landmark",),
            ),
        )

    region = Region.from_cap(caps[0], n_points)
    for cap in caps[1:]:
        clipped = intersect(region, cap)
        if clipped is None:
            discarded.append((cap.landmark_id, DiscardReason.EMPTY_INTERSECTION))
        else:
            region = clipped

    estimate = barycenter(region)
    area = polygon_area_km2(region)
    flags = []
    if area < THIN_REGION_KM2:
        flags.append("thin_region")
    for cap in region.caps:
        if not cap.contains(estimate, tol_km=GEO_TOLERANCE_KM):
            flags.append("barycenter_outside")
            break
    return LocalizationResult(
        target_id=inp.target_id,
        estimate=estimate,
        used_landmarks=region.source_caps,
        discarded=tuple(discarded),
        diagnostics=RegionDiagnostics(
            vertex_count=len(region), area_km2=area, flags=tuple(flags)
        ),
        region=region,
    )


def closest_landmark(inp: LocalizationInput) -> GeoPoint:
    """Position of the landmark with smallest minimum RTT (ties by id)."""
    best = min(inp.summaries, key=lambda s: (s.min_rtt_ms, s.landmark_id))
    return best.landmark_pos


def same_continent_filter(
    inp: LocalizationInput, target_continent: Continent
) -> LocalizationInput:
    """Keep only landmarks located on the target's continent."""
    kept = tuple(s for s in inp.summaries if s.continent is target_continent)
    if not kept:
        raise NoLandmarksError(
            f"no landmarks in continent {target_continent.value} for {inp.target_id}"
        )
    return LocalizationInput(
        target_id=inp.target_id, summaries=kept, target_continent=target_continent
    )
