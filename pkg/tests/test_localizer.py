import math

import numpy as np
import pytest

from rttloc.calibration import CalibrationSample, ModelKind, fit
from rttloc.geo import (
    GeoPoint,
    SphericalCap,
    destination,
    great_circle_distance,
    grid_oracle,
    intersect,
)
from rttloc.localizer import (
    DiscardReason,
    LocalizationInput,
    NoLandmarksError,
    closest_landmark,
    localize,
    same_continent_filter,
)
from rttloc.measurement import AccessTech, BurstSummary, Continent


def identity_model():
    """Degree-1 fit on exact distance == delay pairs, so a summary's min RTT
    is exactly the cap radius."""
    samples = [
        CalibrationSample(d, d, AccessTech.WIFI, True) for d in np.linspace(1.0, 6000.0, 60)
    ]
    return fit(samples, ModelKind.GLOBAL, degree=1)


def summary(lid, pos, rtt, tech=AccessTech.WIFI, cont=Continent.EU, target="T1"):
    return BurstSummary(
        landmark_id=lid,
        target_id=target,
        min_rtt_ms=rtt,
        n_probes=10,
        access_tech=tech,
        continent=cont,
        landmark_pos=pos,
    )


MODEL = identity_model()


class TestLocalize:
    def test_outlier_cap_discarded(self):
        """Four landmarks, one with a badly underestimated distance whose cap
        cannot meet the region built from the others."""
        target = GeoPoint(10.0, 10.0)
        near = [
            (destination(target, 0.0, 400.0), 500.0),
            (destination(target, 120.0, 450.0), 600.0),
            (destination(target, 240.0, 500.0), 700.0),
        ]
        outlier_pos = destination(target, 60.0, 3000.0)
        summaries = [
            summary("L1", near[0][0], near[0][1]),
            summary("L2", near[1][0], near[1][1]),
            summary("L3", outlier_pos, 650.0),  # 3000 km away but claims 650 km
            summary("L4", near[2][0], near[2][1]),
        ]
        result = localize(LocalizationInput("T1", tuple(summaries)), MODEL)
        assert ("L3", DiscardReason.EMPTY_INTERSECTION) in result.discarded
        assert set(result.used_landmarks) == {"L1", "L2", "L4"}
        caps = [SphericalCap(p, r, f"L{i}") for i, (p, r) in enumerate(near, 1)]
        _, oracle_centroid = grid_oracle(caps, 0.05)
        assert great_circle_distance(result.estimate, oracle_centroid) < 25.0

    def test_single_landmark_returns_its_position(self):
        pos = GeoPoint(30.0, 30.0)
        result = localize(LocalizationInput("T1", (summary("L1", pos, 500.0),)), MODEL)
        assert result.estimate == pos
        assert result.diagnostics.single_landmark_radius_km == pytest.approx(500.0)
        assert "single_landmark" in result.diagnostics.flags

    def test_three_caps_match_grid_oracle(self):
        positions = [GeoPoint(10, 10), GeoPoint(14, 16), GeoPoint(6, 15)]
        radii = [900.0, 1100.0, 1000.0]
        summaries = tuple(
            summary(f"L{i}", p, r) for i, (p, r) in enumerate(zip(positions, radii), 1)
        )
        result = localize(LocalizationInput("T1", summaries), MODEL)
        assert result.discarded == ()
        caps = [SphericalCap(p, r) for p, r in zip(positions, radii)]
        _, oracle_centroid = grid_oracle(caps, 0.05)
        assert great_circle_distance(result.estimate, oracle_centroid) < 25.0

    def test_input_order_irrelevant(self):
        positions = [GeoPoint(0, 0), GeoPoint(3, 6), GeoPoint(-2, 4), GeoPoint(5, 1)]
        radii = [700.0, 800.0, 900.0, 650.0]
        summaries = [
            summary(f"L{i}", p, r) for i, (p, r) in enumerate(zip(positions, radii), 1)
        ]
        a = localize(LocalizationInput("T1", tuple(summaries)), MODEL)
        b = localize(LocalizationInput("T1", tuple(reversed(summaries))), MODEL)
        assert a.estimate == b.estimate
        assert a.used_landmarks == b.used_landmarks
        assert a.discarded == b.discarded

    def test_filter_drops_distant_estimates(self):
        summaries = (
            summary("L1", GeoPoint(0, 0), 400.0),
            summary("L2", GeoPoint(1, 1), 900.0),
            summary("L3", GeoPoint(2, 0), 2000.0),
        )
        unfiltered = localize(LocalizationInput("T1", summaries), MODEL)
        filtered = localize(LocalizationInput("T1", summaries), MODEL, filter_km=1000.0)
        assert ("L3", DiscardReason.FILTERED_DISTANCE) in filtered.discarded
        assert set(filtered.used_landmarks) <= set(unfiltered.used_landmarks) | {
            lid for lid, _ in unfiltered.discarded
        }
        assert len(filtered.used_landmarks) <= len(unfiltered.used_landmarks)

    def test_all_filtered_raises(self):
        summaries = (summary("L1", GeoPoint(0, 0), 2000.0),)
        with pytest.raises(NoLandmarksError):
            localize(LocalizationInput("T1", summaries), MODEL, filter_km=500.0)

    def test_ties_broken_by_landmark_id(self):
        summaries = (
            summary("Lb", GeoPoint(0, 0), 800.0),
            summary("La", GeoPoint(0, 5), 800.0),
        )
        result = localize(LocalizationInput("T1", summaries), MODEL)
        assert result.used_landmarks[0] == "La"

    def test_discarded_caps_verified_empty_and_used_contain_estimate(self):
        rng = np.random.default_rng(77)
        for _ in range(25):
            base = GeoPoint(float(rng.uniform(-50, 50)), float(rng.uniform(-180, 180)))
            summaries = []
            for i in range(int(rng.integers(2, 7))):
                pos = destination(base, float(rng.uniform(0, 360)), float(rng.uniform(0, 1500)))
                summaries.append(summary(f"L{i}", pos, float(rng.uniform(200, 3000))))
            result = localize(LocalizationInput("T1", tuple(summaries)), MODEL)
            if result.region is None:
                continue
            for lid, reason in result.discarded:
                if reason is not DiscardReason.EMPTY_INTERSECTION:
                    continue
                s = next(s for s in summaries if s.landmark_id == lid)
                cap = SphericalCap(s.landmark_pos, s.min_rtt_ms, lid)
                assert intersect(result.region, cap) is None
            if "thin_region" in result.diagnostics.flags:
                continue
            for cap in result.region.caps:
                assert cap.contains(result.estimate, tol_km=1.0) or (
                    "barycenter_outside" in result.diagnostics.flags
                )

    def test_surrounding_caps_bracket_target(self):
        """Mildly overestimated radii (the additive-noise regime) keep every
        cap and land the estimate on the intersection centroid, near the
        target."""
        target = GeoPoint(20.0, 40.0)
        summaries = []
        for i, (bearing, dist) in enumerate([(0, 700), (90, 900), (200, 820), (290, 610)]):
            pos = destination(target, float(bearing), float(dist))
            summaries.append(summary(f"L{i}", pos, dist * 1.18))
        result = localize(LocalizationInput("T1", tuple(summaries)), MODEL)
        assert result.discarded == ()
        caps = [SphericalCap(s.landmark_pos, s.min_rtt_ms, s.landmark_id) for s in summaries]
        _, oracle_centroid = grid_oracle(caps, 0.05)
        assert great_circle_distance(result.estimate, oracle_centroid) < 25.0
        assert great_circle_distance(result.estimate, target) < 60.0


class TestClosestLandmark:
    def test_argmin(self):
        summaries = (
            summary("A", GeoPoint(0, 0), 30.0),
            summary("B", GeoPoint(10, 10), 12.0),
            summary("C", GeoPoint(20, 20), 45.0),
        )
        assert closest_landmark(LocalizationInput("T1", summaries)) == GeoPoint(10, 10)

    def test_single(self):
        summaries = (summary("A", GeoPoint(5, 5), 30.0),)
        assert closest_landmark(LocalizationInput("T1", summaries)) == GeoPoint(5, 5)

    def test_tie_breaks_by_id(self):
        summaries = (
            summary("B", GeoPoint(10, 10), 20.0),
            summary("A", GeoPoint(0, 0), 20.0),
        )
        assert closest_landmark(LocalizationInput("T1", summaries)) == GeoPoint(0, 0)


class TestSameContinentFilter:
    def test_keeps_matching(self):
        summaries = (
            summary("A", GeoPoint(48, 2), 10.0, cont=Continent.EU),
            summary("B", GeoPoint(52, 13), 12.0, cont=Continent.EU),
            summary("C", GeoPoint(40, -74), 80.0, cont=Continent.NA),
        )
        out = same_continent_filter(LocalizationInput("T1", summaries), Continent.EU)
        assert len(out.summaries) == 2
        assert out.target_continent is Continent.EU

    def test_no_op_when_all_match(self):
        summaries = (
            summary("A", GeoPoint(48, 2), 10.0, cont=Continent.EU),
            summary("B", GeoPoint(52, 13), 12.0, cont=Continent.EU),
        )
        out = same_continent_filter(LocalizationInput("T1", summaries), Continent.EU)
        assert out.summaries == summaries

    def test_empty_result_raises(self):
        summaries = (summary("A", GeoPoint(48, 2), 10.0, cont=Continent.EU),)
        with pytest.raises(NoLandmarksError):
            same_continent_filter(LocalizationInput("T1", summaries), Continent.OC)


class TestInputValidation:
    def test_duplicate_landmarks_rejected(self):
        s = summary("A", GeoPoint(0, 0), 10.0)
        with pytest.raises(ValueError):
            LocalizationInput("T1", (s, s))

    def test_empty_rejected(self):
        with pytest.raises(NoLandmarksError):
            LocalizationInput("T1", ())
