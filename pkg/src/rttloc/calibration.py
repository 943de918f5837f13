"""Delay-distance models: polynomial fits per partition, with monotonic cutoff.

A model converts a burst's minimum RTT into an estimated great-circle
distance.  Partitions: a single global fit; same/different-continent fits;
per-technology fits (Wi-Fi/3G/4G); the hybrid cross product; and a fixed
linear reference line at 4/9 of the speed of light applied to one-way delay.

Fitted polynomials are only trusted where distance grows with delay: each fit
carries the delay at which its derivative first vanishes, and evaluation is
held constant beyond it (and below the symmetric low-side point, so estimates
are non-decreasing in delay everywhere).
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from numpy.polynomial import polynomial as npoly

from .geo import HALF_CIRCUMFERENCE_KM
from .measurement import AccessTech
from .stats import median_lowmid, population_std

SPEED_OF_LIGHT_KM_S = 299792.458
LINEAR_COEFF = 4.0 / 9.0  # fraction of c covered by one-way delay, wired reference
D_FLOOR_KM = 1.0  # smallest radius a model may produce
D_MAX_KM = HALF_CIRCUMFERENCE_KM - 1.0  # largest radius that still yields a usable cap
MIN_SUBMODEL_SAMPLES = 50
DEFAULT_DEGREE = 3
DEFAULT_BIN_WIDTH_MS = 25.0

GLOBAL_KEY = "global"
TECH_KEYS = (AccessTech.WIFI.value, AccessTech.G3.value, AccessTech.G4.value)


class ModelKind(str, enum.Enum):
    GLOBAL = "global"
    CONTINENT = "continent"
    TECHNOLOGY = "technology"
    HYBRID = "hybrid"
    LINEAR_BASELINE = "linear"


class InsufficientDataError(ValueError):
    pass


class NonPhysicalFitError(ValueError):
    """The fitted curve decreases at the start of its own training range."""


@dataclass(frozen=True)
class CalibrationSample:
    min_rtt_ms: float
    distance_km: float
    access_tech: AccessTech
    same_continent: bool

    def __post_init__(self) -> None:
        if self.min_rtt_ms <= 0.0:
            raise ValueError("delay must be positive")
        if self.distance_km < 0.0:
            raise ValueError("distance must be non-negative")


@dataclass(frozen=True)
class PolynomialFit:
    """A polynomial in delay (ascending coefficients, km per ms^k) clamped to
    its monotone window [monotone_start_ms, delay_cutoff_ms] and to the
    [D_FLOOR_KM, D_MAX_KM] distance range."""

    coefficients: tuple[float, ...]
    delay_cutoff_ms: float
    distance_at_cutoff_km: float
    fit_range: tuple[float, float]
    n_samples: int
    monotone_start_ms: float = 0.0

    def evaluate(self, delay_ms):
        delay = np.clip(np.asarray(delay_ms, dtype=float), self.monotone_start_ms, self.delay_cutoff_ms)
        value = npoly.polyval(delay, np.asarray(self.coefficients))
        out = np.clip(value, D_FLOOR_KM, D_MAX_KM)
        return float(out) if np.isscalar(delay_ms) or np.ndim(delay_ms) == 0 else out


def _real_roots(coeffs: np.ndarray) -> list[float]:
    if len(coeffs) <= 1 or not np.any(coeffs[1:]):
        return []
    roots = npoly.polyroots(coeffs)
    scale = max(1.0, float(np.max(np.abs(roots)))) if len(roots) else 1.0
    return sorted(float(r.real) for r in np.atleast_1d(roots) if abs(r.imag) <= 1e-9 * scale)


def compute_cutoff(
    coefficients: Sequence[float], fit_range: tuple[float, float]
) -> tuple[float, float]:
    """Largest delay up to which the polynomial keeps increasing.

    Scans the derivative's real roots inside the training range; the first
    one is the cutoff, otherwise the range maximum.  A derivative that is
    already non-positive at the range minimum is rejected as non-physical.
    """
    coeffs = np.asarray(coefficients, dtype=float)
    lo, hi = fit_range
    deriv = npoly.polyder(coeffs)
    if float(npoly.polyval(lo, deriv)) <= 0.0:
        raise NonPhysicalFitError(f"fit decreases at the start of its range ({lo} ms)")
    interior = [r for r in _real_roots(deriv) if lo < r <= hi]
    cutoff = interior[0] if interior else float(hi)
    return cutoff, float(npoly.polyval(cutoff, coeffs))


def _monotone_start(coefficients: Sequence[float], range_min: float) -> float:
    """Largest derivative root at or below the range minimum (0 if none);
    evaluation below it is held constant so extrapolated small delays can
    never yield larger distances than measured ones."""
    deriv = npoly.polyder(np.asarray(coefficients, dtype=float))
    below = [r for r in _real_roots(deriv) if r <= range_min]
    return max(0.0, max(below)) if below else 0.0


@dataclass(frozen=True)
class DelayDistanceModel:
    kind: ModelKind
    degree: int
    sub_models: Mapping[str, PolynomialFit]
    fallback: PolynomialFit
    fallback_keys: frozenset[str] = field(default_factory=frozenset)

    def key_for(self, tech: AccessTech | None, same_continent: bool | None) -> str | None:
        """Sub-model key for a measurement's context; None means the global
        fallback must be used."""
        if self.kind in (ModelKind.GLOBAL, ModelKind.LINEAR_BASELINE):
            return GLOBAL_KEY
        if self.kind is ModelKind.CONTINENT:
            if same_continent is None:
                return None
            return "same" if same_continent else "different"
        tech_key = tech.value if tech is not None and tech.value in TECH_KEYS else None
        if self.kind is ModelKind.TECHNOLOGY:
            return tech_key
        # hybrid
        if tech_key is None or same_continent is None:
            return None
        return f"{tech_key}:{'same' if same_continent else 'different'}"

    def select(
        self, tech: AccessTech | None = None, same_continent: bool | None = None
    ) -> tuple[PolynomialFit, bool]:
        """The fit to apply plus a flag telling whether the global fallback
        stood in (missing context, excluded technology, or sparse training)."""
        key = self.key_for(tech, same_continent)
        if key is None or key == GLOBAL_KEY:
            return self.fallback, key is None
        fit = self.sub_models.get(key)
        if fit is None:
            return self.fallback, True
        return fit, key in self.fallback_keys

    def estimate(
        self,
        min_rtt_ms: float,
        tech: AccessTech | None = None,
        same_continent: bool | None = None,
    ) -> float:
        fit, _ = self.select(tech, same_continent)
        return fit.evaluate(min_rtt_ms)


def estimate_distance(
    model: DelayDistanceModel,
    min_rtt_ms: float,
    tech: AccessTech | None = None,
    same_continent: bool | None = None,
) -> float:
    """Estimated landmark-target distance in km for a burst minimum RTT."""
    if min_rtt_ms <= 0.0:
        raise ValueError("delay must be positive")
    return model.estimate(min_rtt_ms, tech, same_continent)


def _fit_polynomial(
    delays: np.ndarray, distances: np.ndarray, degree: int, *, on_medians: bool, bin_width: float
) -> PolynomialFit:
    if on_medians:
        bins = _bin_indices(delays, bin_width)
        xs, ys = [], []
        for b in np.unique(bins):
            sel = bins == b
            xs.append(float(np.median(delays[sel])))
            ys.append(float(np.median(distances[sel])))
        delays = np.asarray(xs)
        distances = np.asarray(ys)
    if delays.size < degree + 1:
        raise InsufficientDataError(
            f"{delays.size} samples cannot constrain a degree-{degree} fit"
        )
    if float(np.ptp(delays)) == 0.0:
        raise InsufficientDataError("all delays identical; design matrix is degenerate")
    coeffs = npoly.polyfit(delays, distances, degree)
    fit_range = (float(delays.min()), float(delays.max()))
    cutoff, dist_at_cutoff = compute_cutoff(coeffs, fit_range)
    return PolynomialFit(
        coefficients=tuple(float(c) for c in coeffs),
        delay_cutoff_ms=cutoff,
        distance_at_cutoff_km=float(np.clip(dist_at_cutoff, D_FLOOR_KM, D_MAX_KM)),
        fit_range=fit_range,
        n_samples=int(delays.size),
        monotone_start_ms=_monotone_start(coeffs, fit_range[0]),
    )


def sample_key(kind: ModelKind, sample: CalibrationSample) -> str | None:
    """Partition key a calibration sample falls into (None = excluded)."""
    if kind in (ModelKind.GLOBAL, ModelKind.LINEAR_BASELINE):
        return GLOBAL_KEY
    if kind is ModelKind.CONTINENT:
        return "same" if sample.same_continent else "different"
    tech_key = sample.access_tech.value if sample.access_tech.value in TECH_KEYS else None
    if kind is ModelKind.TECHNOLOGY:
        return tech_key
    if tech_key is None:
        return None
    return f"{tech_key}:{'same' if sample.same_continent else 'different'}"


def _expected_keys(kind: ModelKind) -> tuple[str, ...]:
    if kind is ModelKind.CONTINENT:
        return ("same", "different")
    if kind is ModelKind.TECHNOLOGY:
        return TECH_KEYS
    if kind is ModelKind.HYBRID:
        return tuple(f"{t}:{c}" for t in TECH_KEYS for c in ("same", "different"))
    return ()


def fit(
    samples: Sequence[CalibrationSample],
    kind: ModelKind = ModelKind.GLOBAL,
    degree: int = DEFAULT_DEGREE,
    *,
    min_sub_samples: int = MIN_SUBMODEL_SAMPLES,
    fit_on_medians: bool = False,
    median_bin_width_ms: float = DEFAULT_BIN_WIDTH_MS,
) -> DelayDistanceModel:
    """Least-squares fit of distance on minimum RTT per partition.

    Sub-models with fewer than ``min_sub_samples`` points, or whose fit is
    rejected as non-physical, fall back to the global fit and are listed in
    ``fallback_keys``.  ``fit_on_medians`` replaces the raw points with
    per-bin medians before fitting (sensitivity-check mode).
    """
    if kind is ModelKind.LINEAR_BASELINE:
        return linear_baseline()
    if degree < 1:
        raise ValueError("degree must be >= 1")
    if not samples:
        raise InsufficientDataError("no calibration samples")
    delays = np.array([s.min_rtt_ms for s in samples], dtype=float)
    distances = np.array([s.distance_km for s in samples], dtype=float)
    global_fit = _fit_polynomial(
        delays, distances, degree, on_medians=fit_on_medians, bin_width=median_bin_width_ms
    )
    sub_models: dict[str, PolynomialFit] = {}
    fallback_keys: set[str] = set()
    for key in _expected_keys(kind):
        idx = [i for i, s in enumerate(samples) if sample_key(kind, s) == key]
        if len(idx) < max(min_sub_samples, degree + 1):
            sub_models[key] = global_fit
            fallback_keys.add(key)
            continue
        try:
            sub_models[key] = _fit_polynomial(
                delays[idx],
                distances[idx],
                degree,
                on_medians=fit_on_medians,
                bin_width=median_bin_width_ms,
            )
        except (InsufficientDataError, NonPhysicalFitError):
            sub_models[key] = global_fit
            fallback_keys.add(key)
    return DelayDistanceModel(
        kind=kind,
        degree=degree,
        sub_models=sub_models,
        fallback=global_fit,
        fallback_keys=frozenset(fallback_keys),
    )


def linear_baseline() -> DelayDistanceModel:
    """Reference model: distance = (4/9) * c * one-way delay."""
    km_per_ms = LINEAR_COEFF * SPEED_OF_LIGHT_KM_S / 2000.0
    cutoff = D_MAX_KM / km_per_ms
    baseline = PolynomialFit(
        coefficients=(0.0, km_per_ms),
        delay_cutoff_ms=cutoff,
        distance_at_cutoff_km=D_MAX_KM,
        fit_range=(0.0, cutoff),
        n_samples=0,
    )
    return DelayDistanceModel(
        kind=ModelKind.LINEAR_BASELINE,
        degree=1,
        sub_models={},
        fallback=baseline,
    )


@dataclass(frozen=True)
class BinStat:
    delay_lo_ms: float
    delay_hi_ms: float
    median_distance_km: float
    std_distance_km: float
    count: int


@dataclass(frozen=True)
class BinDiagnostics:
    bin_width_ms: float
    bins: tuple[BinStat, ...]
    n_samples: int


def _bin_indices(delays: np.ndarray, bin_width: float) -> np.ndarray:
    return np.floor(delays / bin_width).astype(int)


def bin_diagnostics(
    samples: Sequence[CalibrationSample], bin_width_ms: float = DEFAULT_BIN_WIDTH_MS
) -> BinDiagnostics:
    """Median/std/count of distance per fixed-width delay bin (anchored at 0)."""
    if bin_width_ms <= 0.0:
        raise ValueError("bin width must be positive")
    delays = np.array([s.min_rtt_ms for s in samples], dtype=float)
    distances = np.array([s.distance_km for s in samples], dtype=float)
    stats: list[BinStat] = []
    if delays.size:
        indices = _bin_indices(delays, bin_width_ms)
        for b in np.unique(indices):
            sel = indices == b
            dist = distances[sel]
            stats.append(
                BinStat(
                    delay_lo_ms=float(b) * bin_width_ms,
                    delay_hi_ms=float(b + 1) * bin_width_ms,
                    median_distance_km=median_lowmid(dist.tolist()),
                    std_distance_km=population_std(dist.tolist()),
                    count=int(sel.sum()),
                )
            )
    return BinDiagnostics(bin_width_ms=bin_width_ms, bins=tuple(stats), n_samples=int(delays.size))


MODEL_FORMAT_VERSION = 1


def _fit_to_dict(fit_: PolynomialFit) -> dict:
    return {
        "coefficients": list(fit_.coefficients),
        "delay_cutoff_ms": fit_.delay_cutoff_ms,
        "distance_at_cutoff_km": fit_.distance_at_cutoff_km,
        "fit_range": list(fit_.fit_range),
        "n_samples": fit_.n_samples,
        "monotone_start_ms": fit_.monotone_start_ms,
    }


def _fit_from_dict(data: dict) -> PolynomialFit:
    return PolynomialFit(
        coefficients=tuple(data["coefficients"]),
        delay_cutoff_ms=data["delay_cutoff_ms"],
        distance_at_cutoff_km=data["distance_at_cutoff_km"],
        fit_range=tuple(data["fit_range"]),
        n_samples=data["n_samples"],
        monotone_start_ms=data.get("monotone_start_ms", 0.0),
    )


def model_to_dict(model: DelayDistanceModel) -> dict:
    return {
        "format": "rttloc-delay-distance-model",
        "version": MODEL_FORMAT_VERSION,
        "kind": model.kind.value,
        "degree": model.degree,
        "sub_models": {k: _fit_to_dict(v) for k, v in sorted(model.sub_models.items())},
        "fallback": _fit_to_dict(model.fallback),
        "fallback_keys": sorted(model.fallback_keys),
    }


def model_from_dict(data: dict) -> DelayDistanceModel:
    if data.get("format") != "rttloc-delay-distance-model":
        raise ValueError("not a delay-distance model document")
    if data.get("version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model version: {data.get('version')}")
    return DelayDistanceModel(
        kind=ModelKind(data["kind"]),
        degree=data["degree"],
        sub_models={k: _fit_from_dict(v) for k, v in data["sub_models"].items()},
        fallback=_fit_from_dict(data["fallback"]),
        fallback_keys=frozenset(data["fallback_keys"]),
    )


def save_model(model: DelayDistanceModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2, sort_keys=True) + "\n")


def load_model(path: str | Path) -> DelayDistanceModel:
    return model_from_dict(json.loads(Path(path).read_text()))
