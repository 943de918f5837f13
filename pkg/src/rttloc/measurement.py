"""Landmark measurement bursts: data model, validation, and CSV ingestion.

A burst is one landmark probing one target several times; downstream code
works with the burst minimum RTT.  Bursts taken while the device moved, while
the connection type changed, or without a GPS fix are rejected here.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .geo import GeoPoint, great_circle_distance
from .stats import median_lowmid

MAX_DISPLACEMENT_KM = 5.0


class AccessTech(str, enum.Enum):
    WIFI = "wifi"
    G3 = "3g"
    G4 = "4g"
    OTHER_NA = "na"


class Continent(str, enum.Enum):
    AF = "af"
    AS = "as"
    EU = "eu"
    NA = "na"
    OC = "oc"
    SA = "sa"


class PositionSource(str, enum.Enum):
    GPS = "gps"
    NETWORK = "network"


class RejectReason(str, enum.Enum):
    MOBILITY = "mobility"
    TECH_CHANGE = "tech_change"
    NON_GPS = "non_gps"
    OBSOLETE_TECH = "obsolete_tech"


@dataclass(frozen=True)
class MeasurementRecord:
    """One landmark-to-target probe burst with its collection context."""

    landmark_id: str
    start_pos: GeoPoint
    end_pos: GeoPoint
    access_tech: AccessTech
    continent: Continent
    target_id: str
    target_pos: GeoPoint | None
    rtts_ms: tuple[float, ...]
    position_source: PositionSource = PositionSource.GPS
    tech_changed: bool = False

    def __post_init__(self) -> None:
        if not self.rtts_ms:
            raise ValueError("burst has no RTT samples")
        if any(r <= 0.0 for r in self.rtts_ms):
            raise ValueError("RTT samples must be positive")


@dataclass(frozen=True)
class BurstSummary:
    """Burst reduced to its minimum RTT, keyed by the landmark's context."""

    landmark_id: str
    target_id: str
    min_rtt_ms: float
    n_probes: int
    access_tech: AccessTech
    continent: Continent
    landmark_pos: GeoPoint


@dataclass(frozen=True)
class StabilityCurve:
    """Median deviation of prefix minima from the whole-burst minimum,
    one entry per prefix length J = 1..burst_length."""

    deviations: tuple[tuple[int, float], ...]

    @property
    def prefix_lengths(self) -> tuple[int, ...]:
        return tuple(j for j, _ in self.deviations)

    @property
    def values(self) -> tuple[float, ...]:
        return tuple(v for _, v in self.deviations)


def validate(record: MeasurementRecord, require_tech: bool = False) -> RejectReason | None:
    """Apply the acceptance rules; returns None when accepted.

    require_tech rejects bursts without a usable technology label, for use
    when the downstream model is keyed by access technology.
    """
    if great_circle_distance(record.start_pos, record.end_pos) > MAX_DISPLACEMENT_KM:
        return RejectReason.MOBILITY
    if record.tech_changed:
        return RejectReason.TECH_CHANGE
    if record.position_source is not PositionSource.GPS:
        return RejectReason.NON_GPS
    if require_tech and record.access_tech is AccessTech.OTHER_NA:
        return RejectReason.OBSOLETE_TECH
    return None


def summarize(record: MeasurementRecord) -> BurstSummary:
    """Reduce an accepted record to its minimum-RTT summary."""
    return BurstSummary(
        landmark_id=record.landmark_id,
        target_id=record.target_id,
        min_rtt_ms=min(record.rtts_ms),
        n_probes=len(record.rtts_ms),
        access_tech=record.access_tech,
        continent=record.continent,
        landmark_pos=record.start_pos,
    )


def stability_curve(bursts: Sequence[Sequence[float]]) -> StabilityCurve:
    """How much the burst minimum would shift if only the first J probes
    had been collected, as a median over bursts."""
    if not bursts:
        raise ValueError("no bursts given")
    length = len(bursts[0])
    if length == 0 or any(len(b) != length for b in bursts):
        raise ValueError("bursts must be non-empty and of equal length")
    per_j: list[tuple[int, float]] = []
    deviations = []
    for burst in bursts:
        full_min = min(burst)
        prefix_min = []
        running = float("inf")
        for value in burst:
            running = min(running, value)
            prefix_min.append(running - full_min)
        deviations.append(prefix_min)
    for j in range(length):
        per_j.append((j + 1, median_lowmid([d[j] for d in deviations])))
    return StabilityCurve(tuple(per_j))


CSV_HEADER = [
    "landmark_id",
    "lat_start",
    "lon_start",
    "lat_end",
    "lon_end",
    "tech",
    "continent",
    "target_id",
    "target_lat",
    "target_lon",
    "position_source",
    "tech_changed",
    "rtts_ms",
]


@dataclass(frozen=True)
class ParseFailure:
    line_no: int
    message: str


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1"):
        return True
    if lowered in ("false", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_row(row: dict[str, str]) -> MeasurementRecord:
    rtts = tuple(float(tok) for tok in row["rtts_ms"].split(";") if tok != "")
    target_lat = row["target_lat"].strip()
    target_lon = row["target_lon"].strip()
    if (target_lat == "") != (target_lon == ""):
        raise ValueError("target coordinates must be both present or both empty")
    target_pos = None if target_lat == "" else GeoPoint(float(target_lat), float(target_lon))
    return MeasurementRecord(
        landmark_id=row["landmark_id"],
        start_pos=GeoPoint(float(row["lat_start"]), float(row["lon_start"])),
        end_pos=GeoPoint(float(row["lat_end"]), float(row["lon_end"])),
        access_tech=AccessTech(row["tech"].strip().lower()),
        continent=Continent(row["continent"].strip().lower()),
        target_id=row["target_id"],
        target_pos=target_pos,
        rtts_ms=rtts,
        position_source=PositionSource(row["position_source"].strip().lower()),
        tech_changed=_parse_bool(row["tech_changed"]),
    )


def ingest(path: str | Path, fmt: str = "csv") -> tuple[list[MeasurementRecord], list[ParseFailure]]:
    """Read measurement records from the canonical CSV file.

    Malformed lines are skipped and reported in the failure list; they never
    abort the batch.  Raises OSError for I/O problems and ValueError for an
    unknown format or a bad header.
    """
    if fmt != "csv":
        raise ValueError(f"unknown measurement format: {fmt!r}")
    records: list[MeasurementRecord] = []
    failures: list[ParseFailure] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise ValueError(f"unexpected header in {path}: {reader.fieldnames}")
        for row in reader:
            line_no = reader.line_num
            try:
                if None in row or any(v is None for v in row.values()):
                    raise ValueError("wrong number of fields")
                records.append(_parse_row(row))
            except (ValueError, KeyError) as exc:
                failures.append(ParseFailure(line_no, str(exc)))
    return records, failures


def _fmt(value: float) -> str:
    return repr(float(value))


def write_records(path: str | Path, records: Iterable[MeasurementRecord]) -> None:
    """Write records in the canonical CSV format (round-trips exactly)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for rec in records:
            writer.writerow(
                [
                    rec.landmark_id,
                    _fmt(rec.start_pos.lat),
                    _fmt(rec.start_pos.lon),
                    _fmt(rec.end_pos.lat),
                    _fmt(rec.end_pos.lon),
                    rec.access_tech.value,
                    rec.continent.value,
                    rec.target_id,
                    "" if rec.target_pos is None else _fmt(rec.target_pos.lat),
                    "" if rec.target_pos is None else _fmt(rec.target_pos.lon),
                    rec.position_source.value,
                    "true" if rec.tech_changed else "false",
                    ";".join(_fmt(r) for r in rec.rtts_ms),
                ]
            )
