"""Command-line front end.

Subcommands: synth, ingest, fit, moran, classify, export, run, report.
Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure.
Set CONCENTRA_LOG=debug|info|warning to control verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .autocorr import build_weights, moran_result_json, morans_p
from .classify import ClassifierThresholds, classify_pattern
from .config import config_from_dict, load_config
from .errors import ConfigError, DataError, NumericError
from .geo import PLANAR, parse_regions
from .gwr import (
    KernelConfig,
    diagnostics_dict,
    gwr_fit,
    optimize_bandwidth,
    write_fit_csv,
)
from .ingest import (
    DETERMINANTS,
    IngestConfig,
    build_proxy_table,
    read_measurements_csv,
    read_proxy_csv,
    write_proxy_csv,
)
from .pipeline import (
    derive_seed,
    export_choropleth,
    run_pipeline,
    _observations_for,
)
from .synth import CityConfig, MeasurementCloudConfig, PlantSpec, write_bundle

log = logging.getLogger("concentra")


def _setup_logging() -> None:
    level = os.environ.get("CONCENTRA_LOG", "warning").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _parse_search(text: str) -> tuple[int, int]:
    try:
        lo, hi = text.split("..")
        return int(lo), int(hi)
    except ValueError as exc:
        raise ConfigError(f"bad --bandwidth-search {text!r}, expected MIN..MAX") from exc


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="concentra",
        description="Concentric-pattern analysis of broadband diffusion determinants",
    )
    parser.add_argument("--version", action="version", version=f"concentra {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="full pipeline from a config file")
    run_p.add_argument("--config", required=True, help="TOML config or JSON run manifest")
    run_p.add_argument("--seed", type=int)
    run_p.add_argument("--determinant", action="append", dest="determinants")
    run_p.add_argument("--bandwidth", type=int)
    run_p.add_argument("--bandwidth-search", type=str)
    run_p.add_argument("--weights-scheme", choices=["knn", "queen", "idist"])
    run_p.add_argument("--classes", type=int)
    run_p.add_argument("--out", type=Path)

    synth_p = sub.add_parser("synth", help="generate a synthetic input bundle")
    synth_p.add_argument("--out", type=Path, required=True)
    synth_p.add_argument("--seed", type=int, required=True)
    synth_p.add_argument("--rings", type=int, default=10)
    synth_p.add_argument("--regions-per-ring", type=int, default=12)
    synth_p.add_argument("--d0", type=float, default=5000.0)
    synth_p.add_argument("--alpha", type=float, default=1.5)
    synth_p.add_argument("--r0", type=float, default=2000.0)
    synth_p.add_argument("--region-size", type=float, default=1000.0)
    synth_p.add_argument("--noise-sd", type=float, default=0.1)
    synth_p.add_argument(
        "--pattern",
        action="append",
        default=None,
        metavar="DETERMINANT=PATTERN",
        help="plant a pattern, e.g. med_hh_income=concave (repeatable)",
    )

    ingest_p = sub.add_parser("ingest", help="derive the proxy table")
    ingest_p.add_argument("--regions", type=Path, required=True)
    ingest_p.add_argument("--measurements", type=Path, required=True)
    ingest_p.add_argument("--socio", type=Path, required=True)
    ingest_p.add_argument("--seed", type=int, required=True)
    ingest_p.add_argument("--crs-mode", default=PLANAR)
    ingest_p.add_argument("--out", type=Path, required=True, help="proxy table CSV path")

    fit_p = sub.add_parser("fit", help="local regression for one determinant")
    fit_p.add_argument("--regions", type=Path, required=True)
    fit_p.add_argument("--proxy-table", type=Path, required=True)
    fit_p.add_argument("--determinant", required=True, choices=DETERMINANTS)
    fit_p.add_argument("--bandwidth", type=int)
    fit_p.add_argument("--bandwidth-search", type=str, default="8..120")
    fit_p.add_argument("--no-truncate", action="store_true")
    fit_p.add_argument("--out", type=Path, required=True, help="output directory")

    moran_p = sub.add_parser("moran", help="Moran's I on fit residuals")
    moran_p.add_argument("--regions", type=Path, required=True)
    moran_p.add_argument("--fit", type=Path, required=True, help="fit_<det>.csv")
    moran_p.add_argument("--weights-scheme", choices=["knn", "queen", "idist"], default="queen")
    moran_p.add_argument("--k", type=int, default=8)
    moran_p.add_argument("--permutations", type=int, default=999)
    moran_p.add_argument("--seed", type=int, required=True)
    moran_p.add_argument("--out", type=Path, required=True, help="moran JSON path")

    cls_p = sub.add_parser("classify", help="pattern verdict from fit + moran artifacts")
    cls_p.add_argument("--fit", type=Path, required=True)
    cls_p.add_argument("--diagnostics", type=Path, required=True)
    cls_p.add_argument("--moran", type=Path, required=True)
    cls_p.add_argument("--proxy-table", type=Path, required=True)
    cls_p.add_argument("--alpha", type=float, default=0.05)
    cls_p.add_argument("--strong-r2", type=float, default=0.50)
    cls_p.add_argument("--sign-consistency", type=float, default=0.95)
    cls_p.add_argument("--inverted", action="store_true")

    exp_p = sub.add_parser("export", help="choropleth GeoJSON with class breaks")
    exp_p.add_argument("--regions", type=Path, required=True)
    exp_p.add_argument("--values-csv", type=Path, required=True)
    exp_p.add_argument("--values-column", required=True)
    exp_p.add_argument("--id-column", default="region_id")
    exp_p.add_argument("--classes", type=int, default=7)
    exp_p.add_argument("--out", type=Path, required=True)

    rep_p = sub.add_parser("report", help="print the report of a finished run")
    rep_p.add_argument("--run", type=Path, required=True)
    return parser


def _cmd_run(args: argparse.Namespace) -> int:
    config = load_config(args.config, out_dir=args.out)
    doc = config.canonical_dict()
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.determinants:
        doc["determinants"] = args.determinants
    if args.bandwidth is not None:
        doc["kernel"]["bandwidth"] = args.bandwidth
    if args.bandwidth_search is not None:
        lo, hi = _parse_search(args.bandwidth_search)
        doc["kernel"]["bandwidth"] = None
        doc["kernel"]["search_min"], doc["kernel"]["search_max"] = lo, hi
    if args.weights_scheme is not None:
        doc["weights"]["scheme"] = args.weights_scheme
    if args.classes is not None:
        doc["classify"]["classes"] = args.classes
    kernel = dict(doc["kernel"])
    kernel["search"] = [kernel.pop("search_min"), kernel.pop("search_max")]
    doc["kernel"] = kernel
    config = config_from_dict(doc, out_dir=args.out or config.out_dir)
    result = run_pipeline(config)
    print(f"run complete: {result.run_dir}")
    for res in result.results:
        v = res.verdict
        mark = "" if v.sign_trusted else " (untrusted)"
        print(f"  {res.determinant}: {v.sign}{mark}, {v.strength}")
    return 0


def _cmd_synth(args: argparse.Namespace) -> int:
    plant_specs = {}
    for item in args.pattern or []:
        if "=" not in item:
            raise ConfigError(f"--pattern needs DETERMINANT=PATTERN, got {item!r}")
        name, pattern = item.split("=", 1)
        plant_specs[name] = PlantSpec(pattern=pattern, noise_sd=args.noise_sd, seed=args.seed)
    city = CityConfig(
        rings=args.rings,
        regions_per_ring=args.regions_per_ring,
        d0=args.d0,
        alpha=args.alpha,
        r0=args.r0,
        region_size=args.region_size,
        seed=args.seed,
    )
    paths = write_bundle(
        args.out, city, plant_specs, MeasurementCloudConfig(), seed=args.seed
    )
    for label, path in paths.items():
        print(f"{label}: {path}")
    return 0


def _cmd_ingest(args: argparse.Namespace) -> int:
    regions = parse_regions(args.regions.read_bytes(), args.crs_mode)
    measurements = read_measurements_csv(args.measurements.read_bytes(), args.crs_mode)
    table = build_proxy_table(
        regions, measurements, args.socio.read_bytes(), IngestConfig(), seed=args.seed
    )
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_bytes(write_proxy_csv(table))
    for warning in table.warnings:
        log.warning(warning)
    print(f"proxy table: {args.out} ({len(table.rows)} regions)")
    return 0


def _load_observations(regions_path: Path, table_path: Path, determinant: str):
    regions = parse_regions(regions_path.read_bytes())
    table = read_proxy_csv(table_path.read_bytes())
    return regions, table, _observations_for(regions, table, determinant)


def _cmd_fit(args: argparse.Namespace) -> int:
    _, _, (obs, _) = _load_observations(args.regions, args.proxy_table, args.determinant)
    if args.bandwidth is not None:
        bandwidth = args.bandwidth
    else:
        lo, hi = _parse_search(args.bandwidth_search)
        bandwidth = optimize_bandwidth(
            obs, min(lo, len(obs) - 2), min(hi, len(obs) - 2), truncate=not args.no_truncate
        )
    fit = gwr_fit(obs, KernelConfig(bandwidth, truncate=not args.no_truncate))
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / f"fit_{args.determinant}.csv").write_bytes(write_fit_csv(fit))
    (args.out / f"diagnostics_{args.determinant}.json").write_bytes(
        json.dumps(diagnostics_dict(fit, args.determinant), sort_keys=True, indent=1).encode()
    )
    print(
        f"fit {args.determinant}: bandwidth={bandwidth} r2={fit.r_squared:.3f} "
        f"effective={fit.effective_number:.1f}"
    )
    return 0


def _read_fit_csv(path: Path) -> dict[str, list]:
    import csv as _csv
    import io as _io

    reader = _csv.DictReader(_io.StringIO(path.read_text()))
    rows = {"region_id": [], "c1": [], "residual": []}
    for row in reader:
        rows["region_id"].append(row["region_id"])
        rows["c1"].append(float(row["c1"]) if row["c1"] else float("nan"))
        rows["residual"].append(float(row["residual"]) if row["residual"] else float("nan"))
    return rows


def _cmd_moran(args: argparse.Namespace) -> int:
    regions = parse_regions(args.regions.read_bytes())
    fit_rows = _read_fit_csv(args.fit)
    by_id = {r.id: r for r in regions}
    resid = {
        rid: res
        for rid, res in zip(fit_rows["region_id"], fit_rows["residual"])
        if np.isfinite(res)
    }
    missing = [rid for rid in resid if rid not in by_id]
    if missing:
        raise DataError(f"fit regions missing from the region file: {missing[:5]}")
    sel_regions = [by_id[rid] for rid in resid]
    weights = build_weights(sel_regions, args.weights_scheme, k=args.k)
    result = morans_p(
        list(resid.values()),
        weights,
        n_perm=args.permutations,
        seed=derive_seed(args.seed, "moran", "cli"),
    )
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_bytes(moran_result_json(result))
    print(f"moran I={result.i_statistic:.4f} p={result.p_value:.4f}")
    return 0


def _cmd_classify(args: argparse.Namespace) -> int:
    from types import SimpleNamespace

    fit_rows = _read_fit_csv(args.fit)
    diag = json.loads(args.diagnostics.read_text())
    moran_doc = json.loads(args.moran.read_text())
    table = read_proxy_csv(args.proxy_table.read_bytes())
    fit_view = SimpleNamespace(
        c1=np.array(fit_rows["c1"]), r_squared=float(diag["r_squared"])
    )
    moran_view = SimpleNamespace(p_value=float(moran_doc["p_value"]))
    densities = [table.rows[rid].pop_dens for rid in fit_rows["region_id"]]
    verdict = classify_pattern(
        fit_view,
        moran_view,
        densities,
        ClassifierThresholds(
            alpha=args.alpha,
            strong_r2=args.strong_r2,
            sign_consistency=args.sign_consistency,
        ),
        inverted=args.inverted,
    )
    print(
        json.dumps(
            {
                "sign": verdict.sign,
                "strength": verdict.strength,
                "sign_trusted": verdict.sign_trusted,
                "dominant_sign_fraction": round(verdict.dominant_sign_fraction, 6),
                "inverted_semantics": verdict.inverted_semantics,
            },
            sort_keys=True,
        )
    )
    return 0


def _cmd_export(args: argparse.Namespace) -> int:
    import csv as _csv
    import io as _io

    regions = parse_regions(args.regions.read_bytes())
    reader = _csv.DictReader(_io.StringIO(args.values_csv.read_text()))
    fields = reader.fieldnames or []
    if args.id_column not in fields or args.values_column not in fields:
        raise DataError(
            f"values CSV needs columns {args.id_column!r} and {args.values_column!r}"
        )
    values = {}
    for row in reader:
        cell = (row[args.values_column] or "").strip()
        if cell:
            values[row[args.id_column]] = float(cell)
    blob, layer = export_choropleth(regions, values, class_count=args.classes)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_bytes(blob)
    print(f"choropleth: {args.out}")
    for label in layer.legend:
        print(f"  {label}")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    report = args.run / "report.txt"
    if not report.is_file():
        raise DataError(f"no report.txt under {args.run}; is this a finished run?")
    print(report.read_text(), end="")
    return 0


_COMMANDS = {
    "run": _cmd_run,
    "synth": _cmd_synth,
    "ingest": _cmd_ingest,
    "fit": _cmd_fit,
    "moran": _cmd_moran,
    "classify": _cmd_classify,
    "export": _cmd_export,
    "report": _cmd_report,
}


def _fail(kind: str, code: int, exc: Exception) -> int:
    log.error("%s: %s", kind, exc)
    report = {
        "error": kind,
        "type": type(exc).__name__,
        "message": str(exc),
        "exit_code": code,
    }
    print(json.dumps(report, sort_keys=True), file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        return _fail("config error", 2, exc)
    except DataError as exc:
        return _fail("data error", 3, exc)
    except (NumericError, FloatingPointError) as exc:
        return _fail("numeric failure", 4, exc)


if __name__ == "__main__":
    sys.exit(main())
