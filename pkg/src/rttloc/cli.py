"""Command-line pipeline: generate, calibrate, localize, evaluate.

Every subcommand writes its resolved configuration next to its outputs, and
every source of randomness is seeded explicitly, so a run can be reproduced
byte-for-byte from its snapshot.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import click

from . import __version__
from .calibration import (
    DEFAULT_BIN_WIDTH_MS,
    DEFAULT_DEGREE,
    CalibrationSample,
    ModelKind,
    bin_diagnostics,
    fit,
    load_model,
    save_model,
)
from .evaluation import (
    GroupBy,
    baseline_ratio,
    cross_validate,
    error_cdf,
    grouped_error,
    write_cdf_csv,
    write_grouped_csv,
    write_ratio_csv,
    write_summary_json,
)
from .geo import DEFAULT_BOUNDARY_POINTS, GeoPoint, great_circle_distance
from .localizer import (
    LocalizationInput,
    NoLandmarksError,
    closest_landmark,
    localize,
)
from .measurement import AccessTech, Continent, ingest, summarize, validate, write_records
from .synth import (
    CONTINENT_ANCHORS,
    Clustered,
    Placement,
    SynthConfig,
    TechProfile,
    UniformSphere,
    continent_of,
    generate,
    target_continent_map,
    write_truth_csv,
)

TECH_CHOICES = (AccessTech.WIFI, AccessTech.G3, AccessTech.G4)


def _parse_tech_map(text: str, what: str) -> dict[AccessTech, float]:
    out: dict[AccessTech, float] = {}
    try:
        if "=" not in text:
            value = float(text)
            return {tech: value for tech in TECH_CHOICES}
        for token in text.split(","):
            key, _, raw = token.partition("=")
            out[AccessTech(key.strip().lower())] = float(raw)
    except ValueError as exc:
        raise click.BadParameter(f"bad {what} spec {text!r}: {exc}")
    return out


def _probability(ctx, param, value):
    if value is not None and not 0.0 <= value <= 1.0:
        raise click.BadParameter(f"{param.name} must be in [0, 1], got {value}")
    return value


def _write_snapshot(out_dir: Path, name: str, payload: dict) -> None:
    payload = dict(payload, tool_version=__version__)
    (out_dir / name).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _placement_to_dict(placement: Placement) -> dict:
    if isinstance(placement, Clustered):
        return {
            "kind": "clustered",
            "centers": [[c.value, p.lat, p.lon] for c, p in placement.centers],
            "spread_km": placement.spread_km,
        }
    return {"kind": "uniform"}


def _placement_from_dict(data: dict) -> Placement:
    if data["kind"] == "uniform":
        return UniformSphere()
    centers = tuple(
        (Continent(label), GeoPoint(lat, lon)) for label, lat, lon in data["centers"]
    )
    return Clustered(centers, data["spread_km"])


def _load_placement(gen_config: str | None) -> Placement:
    if gen_config is None:
        return UniformSphere()
    data = json.loads(Path(gen_config).read_text())
    return _placement_from_dict(data["placement"])


def _accepted_summaries(records):
    kept = []
    n_rejected = 0
    for rec in records:
        if validate(rec) is None:
            kept.append((rec, summarize(rec)))
        else:
            n_rejected += 1
    return kept, n_rejected


@click.group()
@click.version_option(__version__)
def main() -> None:
    """Delay-based geolocation pipeline for wireless landmark measurements."""


@main.command("generate")
@click.option("--seed", type=int, required=True, help="RNG seed (required; no silent defaults).")
@click.option("--landmarks", type=int, default=100, show_default=True)
@click.option("--targets", type=int, default=50, show_default=True)
@click.option("-o", "--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--placement", type=click.Choice(["clustered", "uniform"]), default="clustered",
              show_default=True)
@click.option("--continents", default="eu,na,as", show_default=True,
              help="Cluster labels for clustered placement.")
@click.option("--spread-km", type=float, default=800.0, show_default=True)
@click.option("--burst", type=int, default=50, show_default=True)
@click.option("--loss-rate", type=float, default=0.0, show_default=True, callback=_probability)
@click.option("--mobility-rate", type=float, default=0.0, show_default=True, callback=_probability)
@click.option("--tech-mix", default="wifi=0.6,3g=0.3,4g=0.1", show_default=True)
@click.option("--base-ms", default="wifi=8,3g=35,4g=15", show_default=True,
              help="Per-tech base latency of the truth model.")
@click.option("--km-per-ms", default="100", show_default=True,
              help="Per-tech propagation speed (single value or per-tech map).")
@click.option("--noise-ms", default="0", show_default=True,
              help="Per-tech exponential noise mean.")
@click.option("--penalty-ms", type=float, default=0.0, show_default=True,
              help="Extra RTT for cross-continent pairs.")
@click.option("--participation", default="1.0,1.0", show_default=True,
              help="Per-target landmark participation range lo,hi.")
@click.option("--route-stretch", type=float, default=0.0, show_default=True,
              help="Mean of the per-burst route stretch excess (0 = direct paths).")
def cmd_generate(seed, landmarks, targets, out_dir, placement, continents, spread_km,
                 burst, loss_rate, mobility_rate, tech_mix, base_ms, km_per_ms,
                 noise_ms, penalty_ms, participation, route_stretch) -> None:
    """Generate synthetic measurements, ground truth, and a config snapshot."""
    mix = _parse_tech_map(tech_mix, "tech mix")
    base = _parse_tech_map(base_ms, "base latency")
    speed = _parse_tech_map(km_per_ms, "km per ms")
    noise = _parse_tech_map(noise_ms, "noise mean")
    try:
        lo, _, hi = participation.partition(",")
        participation_range = (float(lo), float(hi or lo))
    except ValueError:
        raise click.BadParameter(f"bad participation range {participation!r}")

    if placement == "clustered":
        try:
            labels = [Continent(tok.strip().lower()) for tok in continents.split(",") if tok]
        except ValueError as exc:
            raise click.BadParameter(str(exc))
        placement_obj: Placement = Clustered(
            tuple((label, CONTINENT_ANCHORS[label]) for label in labels), spread_km
        )
    else:
        placement_obj = UniformSphere()

    profiles = {
        tech: TechProfile(base.get(tech, 0.0), speed.get(tech, 100.0), noise.get(tech, 0.0))
        for tech in mix
    }
    try:
        config = SynthConfig(
            seed=seed,
            n_landmarks=landmarks,
            n_targets=targets,
            placement=placement_obj,
            tech_profiles=profiles,
            tech_mix=mix,
            intercontinental_penalty_ms=penalty_ms,
            burst_length=burst,
            loss_rate=loss_rate,
            mobility_rate=mobility_rate,
            participation=participation_range,
            route_stretch_mean=route_stretch,
        )
    except ValueError as exc:
        raise click.BadParameter(str(exc))

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records, truth = generate(config)
    write_records(out / "measurements.csv", records)
    write_truth_csv(out / "targets.csv", truth)
    _write_snapshot(out, "config.json", {
        "command": "generate",
        "seed": seed,
        "landmarks": landmarks,
        "targets": targets,
        "placement": _placement_to_dict(placement_obj),
        "tech_profiles": {
            t.value: {"base_latency_ms": p.base_latency_ms, "km_per_ms": p.km_per_ms,
                      "noise_mean_ms": p.noise_mean_ms}
            for t, p in sorted(profiles.items(), key=lambda kv: kv[0].value)
        },
        "tech_mix": {t.value: v for t, v in sorted(mix.items(), key=lambda kv: kv[0].value)},
        "penalty_ms": penalty_ms,
        "burst": burst,
        "loss_rate": loss_rate,
        "mobility_rate": mobility_rate,
        "participation": list(participation_range),
        "route_stretch_mean": route_stretch,
    })
    click.echo(f"wrote {len(records)} records for {targets} targets to {out}")


def _calibration_samples(records, placement: Placement):
    kept, n_rejected = _accepted_summaries(records)
    samples = []
    skipped = 0
    for rec, summ in kept:
        if rec.target_pos is None:
            skipped += 1
            continue
        target_cont = continent_of(rec.target_pos, placement)
        samples.append(
            CalibrationSample(
                min_rtt_ms=summ.min_rtt_ms,
                distance_km=great_circle_distance(summ.landmark_pos, rec.target_pos),
                access_tech=summ.access_tech,
                same_continent=summ.continent is target_cont,
            )
        )
    return samples, n_rejected, skipped


@main.command("calibrate")
@click.argument("data", type=click.Path(exists=True, dir_okay=False))
@click.option("--kind", type=click.Choice([k.value for k in ModelKind]), default="global",
              show_default=True)
@click.option("--degree", type=int, default=DEFAULT_DEGREE, show_default=True)
@click.option("-o", "--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--bin-width", type=float, default=DEFAULT_BIN_WIDTH_MS, show_default=True)
@click.option("--gen-config", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Generate snapshot used to resolve target continents.")
@click.option("--fit-on-medians", is_flag=True, help="Fit on bin medians instead of raw points.")
@click.option("--figures/--no-figures", default=True, show_default=True)
def cmd_calibrate(data, kind, degree, out_dir, bin_width, gen_config, fit_on_medians,
                  figures) -> None:
    """Fit a delay-distance model from measurements with known targets."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records, parse_failures = ingest(data)
    placement = _load_placement(gen_config)
    samples, n_rejected, n_no_truth = _calibration_samples(records, placement)
    model_kind = ModelKind(kind)
    try:
        model = fit(samples, model_kind, degree, fit_on_medians=fit_on_medians)
    except ValueError as exc:
        raise click.ClickException(f"calibration failed: {exc}")
    for key in sorted(model.fallback_keys):
        click.echo(f"warning: sub-model {key!r} fell back to the global fit", err=True)
    save_model(model, out / "model.json")
    diag = bin_diagnostics(samples, bin_width)
    with open(out / "bins.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["delay_lo_ms", "delay_hi_ms", "median_distance_km",
                         "std_distance_km", "count"])
        for b in diag.bins:
            writer.writerow([repr(b.delay_lo_ms), repr(b.delay_hi_ms),
                             repr(b.median_distance_km), repr(b.std_distance_km), b.count])
    if figures:
        from .report import save_calibration_figure

        save_calibration_figure(out / "calibration.png", samples, model, diag)
    _write_snapshot(out, "calibrate_config.json", {
        "command": "calibrate",
        "data": str(data),
        "kind": kind,
        "degree": degree,
        "bin_width_ms": bin_width,
        "fit_on_medians": fit_on_medians,
        "gen_config": gen_config,
        "n_samples": len(samples),
        "n_rejected_records": n_rejected,
        "n_records_without_truth": n_no_truth,
        "n_parse_failures": len(parse_failures),
    })
    click.echo(f"fitted {kind} model on {len(samples)} samples -> {out / 'model.json'}")


def _read_continent_csv(path: str) -> dict[str, Continent]:
    out: dict[str, Continent] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out[row["target_id"]] = Continent(row["continent"].strip().lower())
    return out


@main.command("localize")
@click.argument("data", type=click.Path(exists=True, dir_okay=False))
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("-o", "--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--filter-km", type=float, default=None,
              help="Drop landmarks whose estimated distance exceeds this.")
@click.option("--baseline", type=click.Choice(["closest"]), default=None,
              help="Use a baseline instead of the constraint method.")
@click.option("--n-points", type=int, default=DEFAULT_BOUNDARY_POINTS, show_default=True)
@click.option("--target-continents", type=click.Path(exists=True, dir_okay=False), default=None,
              help="CSV target_id,continent for continent-keyed models.")
def cmd_localize(data, model_path, out_dir, filter_km, baseline, n_points,
                 target_continents) -> None:
    """Localize targets from their measurement bursts."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records, _ = ingest(data)
    model = load_model(model_path)
    continents = _read_continent_csv(target_continents) if target_continents else {}

    kept, _ = _accepted_summaries(records)
    by_target: dict[str, dict[str, object]] = {}
    for _, summ in kept:
        per = by_target.setdefault(summ.target_id, {})
        cur = per.get(summ.landmark_id)
        if cur is None or summ.min_rtt_ms < cur.min_rtt_ms:  # type: ignore[union-attr]
            per[summ.landmark_id] = summ

    rows = []
    for tid in sorted(by_target):
        summaries = tuple(by_target[tid][lid] for lid in sorted(by_target[tid]))
        inp = LocalizationInput(tid, summaries, target_continent=continents.get(tid))
        try:
            if baseline == "closest":
                pos = closest_landmark(inp)
                rows.append([tid, repr(pos.lat), repr(pos.lon), 1, 0, ""])
            else:
                result = localize(inp, model, filter_km=filter_km, n_points=n_points)
                rows.append([
                    tid,
                    repr(result.estimate.lat),
                    repr(result.estimate.lon),
                    len(result.used_landmarks),
                    len(result.discarded),
                    "",
                ])
        except NoLandmarksError:
            rows.append([tid, "", "", 0, len(summaries), "no_landmarks"])

    with open(out / "localizations.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["target_id", "lat", "lon", "n_used", "n_discarded", "reason"])
        writer.writerows(rows)
    _write_snapshot(out, "localize_config.json", {
        "command": "localize",
        "data": str(data),
        "model": str(model_path),
        "filter_km": filter_km,
        "baseline": baseline,
        "n_points": n_points,
        "target_continents": target_continents,
    })
    click.echo(f"localized {len(rows)} targets -> {out / 'localizations.csv'}")


def _threshold_label(threshold: float | None) -> str:
    return "unfiltered" if threshold is None else str(int(threshold))


@main.command("evaluate")
@click.argument("data", type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", type=int, required=True, help="Seed for fold assignment.")
@click.option("-o", "--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--models", default="global", show_default=True,
              help="Comma-separated model kinds to evaluate.")
@click.option("--filters", default="", help="Comma-separated distance thresholds in km; "
              "the unfiltered run is always included.")
@click.option("--k", type=int, default=10, show_default=True)
@click.option("--degree", type=int, default=DEFAULT_DEGREE, show_default=True)
@click.option("--same-continent-only", is_flag=True,
              help="Keep only landmarks on the target's continent.")
@click.option("--gen-config", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Generate snapshot used to resolve target continents.")
@click.option("--count-bin-width", type=float, default=10.0, show_default=True)
@click.option("--distance-bin-width", type=float, default=500.0, show_default=True)
@click.option("--jobs", type=int, default=1, show_default=True)
@click.option("--figures/--no-figures", default=True, show_default=True)
def cmd_evaluate(data, seed, out_dir, models, filters, k, degree, same_continent_only,
                 gen_config, count_bin_width, distance_bin_width, jobs, figures) -> None:
    """Cross-validate models over measurements and emit report artifacts."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        kinds = [ModelKind(tok.strip().lower()) for tok in models.split(",") if tok.strip()]
        thresholds: list[float | None] = [None] + [
            float(tok) for tok in filters.split(",") if tok.strip()
        ]
    except ValueError as exc:
        raise click.BadParameter(str(exc))
    if not kinds:
        raise click.BadParameter("no model kinds given")

    records, parse_failures = ingest(data)
    placement = _load_placement(gen_config)
    truth = {rec.target_id: rec.target_pos for rec in records if rec.target_pos is not None}
    continents = target_continent_map(truth, placement)

    summary: dict[str, dict[str, dict]] = {}
    for kind in kinds:
        summary[kind.value] = {}
        cdf_curves = {}
        unfiltered_report = None
        for threshold in thresholds:
            label = _threshold_label(threshold)
            try:
                report = cross_validate(
                    records,
                    kind,
                    k=k,
                    seed=seed,
                    degree=degree,
                    filter_km=threshold,
                    same_continent_only=same_continent_only,
                    target_continents=continents,
                    jobs=jobs,
                )
            except ValueError as exc:
                raise click.ClickException(f"evaluation failed for {kind.value}: {exc}")
            summary[kind.value][label] = report.to_summary_dict()
            if not report.results:
                continue
            cdf = error_cdf(report.errors)
            cdf_curves[label] = cdf
            write_cdf_csv(out / f"cdf_{kind.value}_{label}.csv", cdf)
            write_grouped_csv(
                out / f"grouped_distance_{kind.value}_{label}.csv",
                grouped_error(report.results, GroupBy.AVG_LANDMARK_DISTANCE,
                              distance_bin_width),
            )
            write_grouped_csv(
                out / f"grouped_count_{kind.value}_{label}.csv",
                grouped_error(report.results, GroupBy.LANDMARK_COUNT, count_bin_width),
            )
            write_ratio_csv(
                out / f"ratio_{kind.value}_{label}.csv",
                baseline_ratio(report.results, report.closest_results(), count_bin_width),
            )
            if threshold is None:
                unfiltered_report = report
        if figures and cdf_curves:
            from .report import save_cdf_figure, save_grouped_figure, save_ratio_figure

            save_cdf_figure(out / f"cdf_{kind.value}.png", cdf_curves,
                            title=f"Localization error CDF ({kind.value})")
            if unfiltered_report is not None:
                save_grouped_figure(
                    out / f"error_vs_distance_{kind.value}.png",
                    grouped_error(unfiltered_report.results,
                                  GroupBy.AVG_LANDMARK_DISTANCE, distance_bin_width),
                    xlabel="average landmark distance (km)",
                    title=f"Error vs landmark distance ({kind.value})",
                )
                save_grouped_figure(
                    out / f"error_vs_count_{kind.value}.png",
                    grouped_error(unfiltered_report.results, GroupBy.LANDMARK_COUNT,
                                  count_bin_width),
                    xlabel="landmarks involved",
                    title=f"Error vs landmark count ({kind.value})",
                )
                save_ratio_figure(
                    out / f"ratio_{kind.value}.png",
                    baseline_ratio(unfiltered_report.results,
                                   unfiltered_report.closest_results(), count_bin_width),
                    title=f"Error ratio vs closest landmark ({kind.value})",
                )

    write_summary_json(out / "summary.json", {
        "n_parse_failures": len(parse_failures),
        "same_continent_only": same_continent_only,
        "models": summary,
    })
    _write_snapshot(out, "evaluate_config.json", {
        "command": "evaluate",
        "data": str(data),
        "seed": seed,
        "models": [kk.value for kk in kinds],
        "filters": [t for t in thresholds if t is not None],
        "k": k,
        "degree": degree,
        "same_continent_only": same_continent_only,
        "gen_config": gen_config,
        "count_bin_width": count_bin_width,
        "distance_bin_width": distance_bin_width,
        "jobs": jobs,
        "figures": figures,
    })
    click.echo(f"evaluation artifacts written to {out}")


if __name__ == "__main__":
    main()
