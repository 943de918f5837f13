"""Synthetic measurement generator with a parametric ground-truth delay model.

Produces landmark/target layouts and RTT bursts so the calibration and
evaluation pipeline can be exercised at desk scale.  The truth model is

    rtt = 2 * distance * stretch / km_per_ms + base_latency
          + intercontinental_penalty (cross-continent pairs)
          + exponential noise (non-negative)

where ``stretch >= 1`` is a per-burst route-circuitousness factor (packets
rarely travel the shortest surface path), so the burst minimum is always
bounded below by the direct-path floor but may sit well above it.  Probe loss
shortens bursts, a configurable fraction of records is generated "mobile"
(end fix displaced by more than the validation limit), and per-target
participation varies the number of landmarks involved.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence, Union

import numpy as np

from .geo import GeoPoint, destination, great_circle_distance
from .measurement import (
    AccessTech,
    Continent,
    MeasurementRecord,
    PositionSource,
)

# Longitude bands used to label points on the uniform-sphere placement.
# Purely synthetic labeling (half-open [lo, hi); the last band closes at 180).
LON_BANDS: tuple[tuple[float, float, Continent], ...] = (
    (-180.0, -170.0, Continent.OC),
    (-170.0, -55.0, Continent.NA),
    (-55.0, -30.0, Continent.SA),
    (-30.0, 20.0, Continent.AF),
    (20.0, 45.0, Continent.EU),
    (45.0, 130.0, Continent.AS),
    (130.0, 180.0, Continent.OC),
)

# Rough continent anchor points for building clustered layouts from labels.
CONTINENT_ANCHORS: Mapping[Continent, GeoPoint] = {
    Continent.AF: GeoPoint(2.0, 20.0),
    Continent.AS: GeoPoint(35.0, 105.0),
    Continent.EU: GeoPoint(48.0, 10.0),
    Continent.NA: GeoPoint(40.0, -95.0),
    Continent.OC: GeoPoint(-25.0, 135.0),
    Continent.SA: GeoPoint(-15.0, -60.0),
}


@dataclass(frozen=True)
class UniformSphere:
    """Uniform placement over the whole sphere; labels come from LON_BANDS."""


@dataclass(frozen=True)
class Clustered:
    """Placement in uniform disks around labeled centers."""

    centers: tuple[tuple[Continent, GeoPoint], ...]
    spread_km: float

    def __post_init__(self) -> None:
        if not self.centers:
            raise ValueError("clustered placement needs at least one center")
        if self.spread_km < 0.0:
            raise ValueError("spread must be non-negative")


Placement = Union[UniformSphere, Clustered]


@dataclass(frozen=True)
class TechProfile:
    """Ground-truth delay parameters for one access technology."""

    base_latency_ms: float
    km_per_ms: float
    noise_mean_ms: float = 0.0

    def __post_init__(self) -> None:
        if self.km_per_ms <= 0.0:
            raise ValueError("km_per_ms must be positive")
        if self.base_latency_ms < 0.0 or self.noise_mean_ms < 0.0:
            raise ValueError("latencies must be non-negative")


@dataclass(frozen=True)
class SynthConfig:
    seed: int
    n_landmarks: int
    n_targets: int
    placement: Placement
    tech_profiles: Mapping[AccessTech, TechProfile]
    tech_mix: Mapping[AccessTech, float]
    intercontinental_penalty_ms: float = 0.0
    burst_length: int = 50
    loss_rate: float = 0.0
    mobility_rate: float = 0.0
    # per-target landmark participation probability, drawn uniformly in range
    participation: tuple[float, float] = (1.0, 1.0)
    # mean of the exponential route stretch excess: per-burst factor 1 + Exp(mean)
    route_stretch_mean: float = 0.0

    def __post_init__(self) -> None:
        if self.n_landmarks < 1 or self.n_targets < 1:
            raise ValueError("need at least one landmark and one target")
        if self.burst_length < 1:
            raise ValueError("burst length must be >= 1")
        for name, p in (("loss_rate", self.loss_rate), ("mobility_rate", self.mobility_rate)):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        lo, hi = self.participation
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValueError("participation range must satisfy 0 <= lo <= hi <= 1")
        if not self.tech_mix:
            raise ValueError("tech mix is empty")
        if abs(sum(self.tech_mix.values()) - 1.0) > 1e-9:
            raise ValueError("tech mix probabilities must sum to 1")
        for tech in self.tech_mix:
            if tech not in self.tech_profiles:
                raise ValueError(f"no truth profile for {tech.value}")
        if self.intercontinental_penalty_ms < 0.0:
            raise ValueError("penalty must be non-negative")
        if self.route_stretch_mean < 0.0:
            raise ValueError("route stretch mean must be non-negative")


def continent_of(point: GeoPoint, placement: Placement) -> Continent:
    """Continent label of a point under the given placement.

    Clustered: label of the nearest center (ties go to the lexicographically
    first label).  Uniform sphere: fixed longitude bands.
    """
    if isinstance(placement, Clustered):
        best = min(
            placement.centers,
            key=lambda item: (great_circle_distance(item[1], point), item[0].value),
        )
        return best[0]
    for lo, hi, label in LON_BANDS:
        if lo <= point.lon < hi:
            return label
    return Continent.OC  # lon == 180 falls in the closing band


def deterministic_rtt_ms(
    distance_km: float,
    profile: TechProfile,
    cross_continent: bool = False,
    penalty_ms: float = 0.0,
    stretch: float = 1.0,
) -> float:
    """Noise-free round-trip time of the truth model."""
    rtt = 2.0 * distance_km * stretch / profile.km_per_ms + profile.base_latency_ms
    if cross_continent:
        rtt += penalty_ms
    return rtt


def rtt_burst(
    rng: np.random.Generator,
    distance_km: float,
    profile: TechProfile,
    burst_length: int,
    cross_continent: bool = False,
    penalty_ms: float = 0.0,
    route_stretch_mean: float = 0.0,
) -> list[float]:
    """One burst of RTT samples: a per-burst routing floor plus per-probe
    exponential noise."""
    stretch = 1.0
    if route_stretch_mean > 0.0:
        stretch += float(rng.exponential(route_stretch_mean))
    floor = deterministic_rtt_ms(distance_km, profile, cross_continent, penalty_ms, stretch)
    if profile.noise_mean_ms > 0.0:
        noise = rng.exponential(profile.noise_mean_ms, size=burst_length)
    else:
        noise = np.zeros(burst_length)
    return [float(floor + n) for n in noise]


def _sample_point(rng: np.random.Generator, placement: Placement) -> GeoPoint:
    if isinstance(placement, Clustered):
        _, center = placement.centers[int(rng.integers(len(placement.centers)))]
        if placement.spread_km == 0.0:
            return center
        bearing = float(rng.uniform(0.0, 360.0))
        dist = placement.spread_km * math.sqrt(float(rng.uniform()))
        return destination(center, bearing, dist)
    lon = float(rng.uniform(-180.0, 180.0))
    lat = math.degrees(math.asin(float(rng.uniform(-1.0, 1.0))))
    return GeoPoint(lat, lon)


def generate(config: SynthConfig) -> tuple[list[MeasurementRecord], dict[str, GeoPoint]]:
    """Generate measurement records and the target ground-truth map.

    Deterministic for a given config: one RNG stream, fixed iteration order.
    Bursts that lose every probe produce no record.
    """
    rng = np.random.default_rng(config.seed)
    techs = sorted(config.tech_mix, key=lambda t: t.value)
    probs = np.array([config.tech_mix[t] for t in techs])

    landmarks = []
    for i in range(config.n_landmarks):
        pos = _sample_point(rng, config.placement)
        landmarks.append((f"L{i:04d}", pos, continent_of(pos, config.placement)))
    truth: dict[str, GeoPoint] = {}
    targets = []
    for i in range(config.n_targets):
        pos = _sample_point(rng, config.placement)
        tid = f"T{i:04d}"
        truth[tid] = pos
        targets.append((tid, pos, continent_of(pos, config.placement)))

    records: list[MeasurementRecord] = []
    for tid, tpos, tcont in targets:
        p_lo, p_hi = config.participation
        participation = float(rng.uniform(p_lo, p_hi)) if p_hi > p_lo else p_lo
        take = rng.uniform(size=config.n_landmarks) < participation
        for (lid, lpos, lcont), taken in zip(landmarks, take):
            if not taken:
                continue
            tech = techs[int(rng.choice(len(techs), p=probs))]
            profile = config.tech_profiles[tech]
            dist = great_circle_distance(lpos, tpos)
            burst = rtt_burst(
                rng,
                dist,
                profile,
                config.burst_length,
                cross_continent=lcont is not tcont,
                penalty_ms=config.intercontinental_penalty_ms,
                route_stretch_mean=config.route_stretch_mean,
            )
            if config.loss_rate > 0.0:
                keep = rng.uniform(size=config.burst_length) >= config.loss_rate
                burst = [r for r, k in zip(burst, keep) if k]
            mobile = bool(rng.uniform() < config.mobility_rate) if config.mobility_rate else False
            if mobile:
                end_pos = destination(
                    lpos, float(rng.uniform(0.0, 360.0)), float(rng.uniform(6.0, 50.0))
                )
            else:
                end_pos = lpos
            if not burst:
                continue
            records.append(
                MeasurementRecord(
                    landmark_id=lid,
                    start_pos=lpos,
                    end_pos=end_pos,
                    access_tech=tech,
                    continent=lcont,
                    target_id=tid,
                    target_pos=tpos,
                    rtts_ms=tuple(burst),
                    position_source=PositionSource.GPS,
                    tech_changed=False,
                )
            )
    return records, truth


def target_continent_map(
    truth: Mapping[str, GeoPoint], placement: Placement
) -> dict[str, Continent]:
    return {tid: continent_of(pos, placement) for tid, pos in truth.items()}


TRUTH_HEADER = ["target_id", "lat", "lon"]


def write_truth_csv(path: str | Path, truth: Mapping[str, GeoPoint]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRUTH_HEADER)
        for tid in sorted(truth):
            pos = truth[tid]
            writer.writerow([tid, repr(pos.lat), repr(pos.lon)])


def read_truth_csv(path: str | Path) -> dict[str, GeoPoint]:
    out: dict[str, GeoPoint] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != TRUTH_HEADER:
            raise ValueError(f"unexpected truth header: {reader.fieldnames}")
        for row in reader:
            out[row["target_id"]] = GeoPoint(float(row["lat"]), float(row["lon"]))
    return out
