import math

import numpy as np
import pytest

from rttloc.calibration import (
    D_FLOOR_KM,
    D_MAX_KM,
    SPEED_OF_LIGHT_KM_S,
    CalibrationSample,
    InsufficientDataError,
    ModelKind,
    NonPhysicalFitError,
    bin_diagnostics,
    compute_cutoff,
    estimate_distance,
    fit,
    linear_baseline,
    load_model,
    model_from_dict,
    model_to_dict,
    sample_key,
    save_model,
)
from rttloc.measurement import AccessTech


def samples_on_curve(coeffs, delays, tech=AccessTech.WIFI, same=True):
    out = []
    for d in delays:
        dist = sum(c * d**k for k, c in enumerate(coeffs))
        out.append(CalibrationSample(float(d), float(dist), tech, same))
    return out


def residual_sum(samples, poly):
    return sum((poly.evaluate(s.min_rtt_ms) - s.distance_km) ** 2 for s in samples)


DELAYS = np.linspace(5.0, 120.0, 80)


class TestFit:
    def test_exact_linear_recovery(self):
        model = fit(samples_on_curve((0.0, 50.0), DELAYS), ModelKind.GLOBAL, degree=1)
        assert model.fallback.coefficients[0] == pytest.approx(0.0, abs=1e-6)
        assert model.fallback.coefficients[1] == pytest.approx(50.0, rel=1e-6)

    def test_exact_quadratic_recovery(self):
        model = fit(samples_on_curve((0.0, 2.0, 0.01), DELAYS), ModelKind.GLOBAL, degree=2)
        got = model.fallback.coefficients
        assert got[1] == pytest.approx(2.0, rel=1e-6)
        assert got[2] == pytest.approx(0.01, rel=1e-6)

    def test_exact_cubic_recovery(self):
        coeffs = (5.0, 40.0, -0.2, 0.0007)
        model = fit(samples_on_curve(coeffs, DELAYS), ModelKind.GLOBAL, degree=3)
        for got, want in zip(model.fallback.coefficients, coeffs):
            assert got == pytest.approx(want, rel=1e-6, abs=1e-9)

    def test_per_tech_residuals_never_worse_than_global(self):
        rng = np.random.default_rng(5)
        slopes = {AccessTech.WIFI: 60.0, AccessTech.G3: 30.0, AccessTech.G4: 45.0}
        samples = []
        for tech, slope in slopes.items():
            for _ in range(120):
                d = float(rng.uniform(5, 100))
                dist = slope * d + float(rng.normal(0, 40))
                samples.append(CalibrationSample(d, max(0.0, dist), tech, True))
        tech_model = fit(samples, ModelKind.TECHNOLOGY, degree=1)
        global_model = fit(samples, ModelKind.GLOBAL, degree=1)
        per_tech = 0.0
        for tech in slopes:
            subset = [s for s in samples if s.access_tech is tech]
            per_tech += residual_sum(subset, tech_model.sub_models[tech.value])
        total_global = residual_sum(samples, global_model.fallback)
        assert per_tech <= total_global + 1e-6

    def test_insufficient_samples(self):
        with pytest.raises(InsufficientDataError):
            fit(samples_on_curve((0.0, 50.0), [10.0, 20.0]), ModelKind.GLOBAL, degree=3)

    def test_degenerate_delays(self):
        sams = [CalibrationSample(10.0, 100.0 * i, AccessTech.WIFI, True) for i in range(1, 9)]
        with pytest.raises(InsufficientDataError):
            fit(sams, ModelKind.GLOBAL, degree=1)

    def test_sparse_partition_falls_back_to_global(self):
        samples = samples_on_curve((0.0, 50.0), DELAYS, tech=AccessTech.WIFI)
        samples += samples_on_curve((0.0, 30.0), DELAYS[:5], tech=AccessTech.G3)
        model = fit(samples, ModelKind.TECHNOLOGY, degree=1)
        assert "3g" in model.fallback_keys
        assert model.sub_models["3g"] == model.fallback
        assert "wifi" not in model.fallback_keys

    def test_local_minimum_of_least_squares(self):
        """Perturbing any fitted coefficient never decreases the residual."""
        rng = np.random.default_rng(17)
        for _ in range(20):
            delays = rng.uniform(5, 150, size=60)
            dists = 40.0 * delays + rng.normal(0, 25, size=60)
            samples = [
                CalibrationSample(float(d), float(max(0.0, y)), AccessTech.WIFI, True)
                for d, y in zip(delays, dists)
            ]
            model = fit(samples, ModelKind.GLOBAL, degree=2)
            coeffs = np.array(model.fallback.coefficients)
            xs = np.array([s.min_rtt_ms for s in samples])
            ys = np.array([s.distance_km for s in samples])

            def rss(c):
                return float(np.sum((np.polynomial.polynomial.polyval(xs, c) - ys) ** 2))

            base = rss(coeffs)
            for k in range(len(coeffs)):
                for sign in (+1, -1):
                    bumped = coeffs.copy()
                    bumped[k] *= 1.0 + sign * 1e-3
                    if bumped[k] == coeffs[k]:
                        bumped[k] += sign * 1e-9
                    assert rss(bumped) >= base - 1e-9 * max(1.0, base)

    def test_hybrid_partition_consistency(self):
        rng = np.random.default_rng(23)
        samples = []
        for _ in range(600):
            tech = [AccessTech.WIFI, AccessTech.G3, AccessTech.G4][int(rng.integers(3))]
            same = bool(rng.integers(2))
            d = float(rng.uniform(5, 100))
            samples.append(CalibrationSample(d, 50.0 * d, tech, same))
        hybrid = fit(samples, ModelKind.HYBRID, degree=1)
        for tech in ("wifi", "3g", "4g"):
            for cont in ("same", "different"):
                expected = [
                    s
                    for s in samples
                    if sample_key(ModelKind.HYBRID, s) == f"{tech}:{cont}"
                ]
                assert hybrid.sub_models[f"{tech}:{cont}"].n_samples == len(expected)
        tech_counts = {
            k: m.n_samples for k, m in fit(samples, ModelKind.TECHNOLOGY, degree=1).sub_models.items()
        }
        for tech in ("wifi", "3g", "4g"):
            combined = (
                hybrid.sub_models[f"{tech}:same"].n_samples
                + hybrid.sub_models[f"{tech}:different"].n_samples
            )
            assert combined == tech_counts[tech]

    def test_fit_on_medians_mode(self):
        samples = samples_on_curve((0.0, 50.0), DELAYS)
        model = fit(samples, ModelKind.GLOBAL, degree=1, fit_on_medians=True)
        assert model.fallback.coefficients[1] == pytest.approx(50.0, rel=1e-6)


class TestEstimate:
    def test_linear_baseline_reference_value(self):
        expected = (4.0 / 9.0) * SPEED_OF_LIGHT_KM_S * (30.0 / 1000.0) / 2.0
        model = linear_baseline()
        assert estimate_distance(model, 30.0) == pytest.approx(expected, abs=1e-9)
        assert estimate_distance(model, 30.0) == pytest.approx(1998.6, abs=0.1)

    def test_fitted_line_evaluation(self):
        model = fit(samples_on_curve((0.0, 50.0), DELAYS), ModelKind.GLOBAL, degree=1)
        assert estimate_distance(model, 10.0) == pytest.approx(500.0, rel=1e-9)

    def test_clamped_beyond_cutoff(self):
        model = fit(samples_on_curve((0.0, 50.0), DELAYS), ModelKind.GLOBAL, degree=1)
        beyond = model.fallback.delay_cutoff_ms + 500.0
        assert estimate_distance(model, beyond) == model.fallback.distance_at_cutoff_km

    def test_floor_applied(self):
        model = fit(samples_on_curve((-20.0, 50.0), DELAYS), ModelKind.GLOBAL, degree=1)
        assert estimate_distance(model, 0.01) == D_FLOOR_KM

    def test_rejects_nonpositive_delay(self):
        with pytest.raises(ValueError):
            estimate_distance(linear_baseline(), 0.0)

    def test_continent_key_selection(self):
        same = samples_on_curve((0.0, 60.0), DELAYS, same=True)
        diff = samples_on_curve((0.0, 20.0), DELAYS, same=False)
        model = fit(same + diff, ModelKind.CONTINENT, degree=1)
        assert estimate_distance(model, 10.0, same_continent=True) == pytest.approx(600.0, rel=1e-6)
        assert estimate_distance(model, 10.0, same_continent=False) == pytest.approx(200.0, rel=1e-6)

    def test_unknown_tech_falls_back_flagged(self):
        samples = []
        for tech in (AccessTech.WIFI, AccessTech.G3, AccessTech.G4):
            samples += samples_on_curve((0.0, 50.0), DELAYS, tech=tech)
        model = fit(samples, ModelKind.TECHNOLOGY, degree=1)
        fitted, fell_back = model.select(AccessTech.OTHER_NA, True)
        assert fell_back
        assert fitted == model.fallback

    def test_monotone_in_delay_everywhere(self):
        rng = np.random.default_rng(31)
        delays = rng.uniform(20, 150, size=300)
        dists = 12.0 * delays + 0.3 * delays**2 + rng.normal(0, 150, size=300)
        samples = [
            CalibrationSample(float(d), float(max(0.0, y)), AccessTech.WIFI, True)
            for d, y in zip(delays, dists)
        ]
        for kind in (ModelKind.GLOBAL, ModelKind.TECHNOLOGY):
            model = fit(samples, kind, degree=3)
            grid = np.linspace(0.1, model.fallback.delay_cutoff_ms * 1.5, 800)
            values = [estimate_distance(model, float(g), AccessTech.WIFI, True) for g in grid]
            assert all(b >= a - 1e-9 for a, b in zip(values, values[1:]))
            assert all(D_FLOOR_KM <= v <= D_MAX_KM for v in values)


class TestCutoff:
    def test_increasing_line_cutoff_at_range_max(self):
        cutoff, dist = compute_cutoff((0.0, 50.0), (5.0, 120.0))
        assert cutoff == 120.0
        assert dist == pytest.approx(6000.0)

    def test_quadratic_peak(self):
        cutoff, dist = compute_cutoff((0.0, 100.0, -0.5), (0.001, 120.0))
        assert cutoff == pytest.approx(100.0, abs=1e-9)
        assert dist == pytest.approx(5000.0, abs=1e-6)

    def test_cubic_matches_analytic_root(self):
        # p = 200 d - 30 d^2 + d^3, p' = 200 - 60 d + 3 d^2
        root = (60.0 - math.sqrt(60.0**2 - 4.0 * 3.0 * 200.0)) / (2.0 * 3.0)
        cutoff, _ = compute_cutoff((0.0, 200.0, -30.0, 1.0), (0.001, 20.0))
        assert cutoff == pytest.approx(root, abs=1e-6)

    def test_decreasing_at_range_min_rejected(self):
        with pytest.raises(NonPhysicalFitError):
            compute_cutoff((1000.0, -5.0), (5.0, 100.0))


class TestBinDiagnostics:
    def test_single_sample_bins(self):
        samples = [
            CalibrationSample(10.0, 400.0, AccessTech.WIFI, True),
            CalibrationSample(40.0, 900.0, AccessTech.WIFI, True),
        ]
        diag = bin_diagnostics(samples, bin_width_ms=25.0)
        assert len(diag.bins) == 2
        assert diag.bins[0].median_distance_km == 400.0
        assert diag.bins[0].std_distance_km == 0.0

    def test_known_median_and_std(self):
        samples = [
            CalibrationSample(5.0, d, AccessTech.WIFI, True) for d in (100.0, 200.0, 300.0)
        ]
        diag = bin_diagnostics(samples, bin_width_ms=25.0)
        assert diag.bins[0].median_distance_km == 200.0
        assert diag.bins[0].std_distance_km == pytest.approx(math.sqrt(20000.0 / 3.0), abs=0.01)
        assert diag.bins[0].std_distance_km == pytest.approx(81.65, abs=0.01)

    def test_counts_partition(self):
        rng = np.random.default_rng(9)
        samples = [
            CalibrationSample(float(rng.uniform(1, 200)), float(rng.uniform(0, 5000)),
                              AccessTech.WIFI, True)
            for _ in range(137)
        ]
        diag = bin_diagnostics(samples)
        assert sum(b.count for b in diag.bins) == diag.n_samples == 137

    def test_rejects_bad_width(self):
        with pytest.raises(ValueError):
            bin_diagnostics([], bin_width_ms=0.0)


class TestSerialization:
    def test_round_trip_equality(self, tmp_path):
        samples = samples_on_curve((5.0, 40.0, -0.1), DELAYS, tech=AccessTech.G4)
        for tech in (AccessTech.WIFI, AccessTech.G3):
            samples += samples_on_curve((5.0, 40.0, -0.1), DELAYS, tech=tech)
        model = fit(samples, ModelKind.HYBRID, degree=2)
        path = tmp_path / "model.json"
        save_model(model, path)
        loaded = load_model(path)
        assert loaded == model

    def test_serialization_is_byte_stable(self, tmp_path):
        model = fit(samples_on_curve((0.0, 50.0), DELAYS), ModelKind.GLOBAL, degree=1)
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        save_model(model, a)
        save_model(load_model(a), b)
        assert a.read_bytes() == b.read_bytes()

    def test_rejects_foreign_document(self):
        with pytest.raises(ValueError):
            model_from_dict({"format": "something-else"})

    def test_dict_round_trip(self):
        model = linear_baseline()
        assert model_from_dict(model_to_dict(model)) == model
