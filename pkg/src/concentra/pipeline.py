"""End-to-end orchestration: files in, verdicts and artifacts out.

A run stages everything into a temporary sibling of the output directory
and renames it into place at the end, so a failed run leaves no partial
outputs.  Artifacts (all deterministic given config + seed):

  run_manifest.json      resolved config, its hash, seed, versions
  proxy_table.csv        per-region proxies
  fit_<det>.csv          local coefficients/residuals per region
  diagnostics_<det>.json global fit diagnostics
  moran_<det>.json       residual autocorrelation test
  weights_<det>.csv      spatial weights used for the Moran test
  verdicts.csv           one classified pattern per determinant
  report.txt             human-readable summary tables
"""

from __future__ import annotations

import json
import math
import os
import shutil
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import __version__
from .autocorr import (
    MoranResult,
    SpatialWeights,
    build_weights,
    moran_result_json,
    morans_p,
    write_weights_csv,
)
from .classify import (
    LITERATURE_PATTERNS,
    REFERENCE_ONLY_DETERMINANTS,
    PatternVerdict,
    assign_classes,
    classify_pattern,
    geometric_intervals,
)
from .config import RunConfig
from .errors import ConfigError, DataError
from .gwr import (
    GwrFit,
    KernelConfig,
    Observation,
    diagnostics_dict,
    gwr_fit,
    optimize_bandwidth,
    write_fit_csv,
)
from .ingest import (
    DETERMINANTS,
    IngestConfig,
    ProxyTable,
    build_proxy_table,
    read_measurements_csv,
    summary_stats,
    write_proxy_csv,
)
from .geo import Region, parse_regions, regions_to_geojson
from .rng import substream


def derive_seed(master_seed: int, *labels: object) -> int:
    """A 63-bit integer sub-seed for components that take plain ints."""
    return int(substream(master_seed, *labels).integers(0, 2**63 - 1))


@dataclass
class DeterminantResult:
    determinant: str
    fit: GwrFit
    moran: MoranResult
    verdict: PatternVerdict
    n_observations: int
    weights: SpatialWeights | None = None


@dataclass
class PipelineResult:
    run_dir: Path
    proxy_table: ProxyTable
    results: list[DeterminantResult]


def _observations_for(
    regions: Sequence[Region], table: ProxyTable, determinant: str
) -> tuple[list[Observation], list[Region]]:
    values = table.values(determinant)
    obs: list[Observation] = []
    used: list[Region] = []
    for region in regions:
        v = values.get(region.id)
        if v is None:
            continue
        obs.append(
            Observation(region_id=region.id, location=region.centroid, x=region.pop_density, y=v)
        )
        used.append(region)
    return obs, used


def analyze_determinant(
    determinant: str,
    regions: Sequence[Region],
    table: ProxyTable,
    config: RunConfig,
    weights_cache: dict | None = None,
) -> DeterminantResult:
    """Bandwidth search, local fit, residual Moran test, classification.

    ``weights_cache`` (keyed by the fitted region-id tuple) lets one run
    reuse spatial weights across determinants sharing an observation set.
    """
    obs, used = _observations_for(regions, table, determinant)
    n = len(obs)
    if n < 10:
        raise DataError(
            f"determinant {determinant!r}: only {n} regions have data; "
            "need at least 10 (check filters and the socio join)"
        )
    if config.kernel.bandwidth is not None:
        bandwidth = config.kernel.bandwidth
        if bandwidth > n - 1:
            raise DataError(
                f"determinant {determinant!r}: bandwidth {bandwidth} too large for n={n}"
            )
    else:
        lo = min(config.kernel.search_min, n - 2)
        hi = min(config.kernel.search_max, n - 2)
        bandwidth = optimize_bandwidth(obs, lo, hi, truncate=config.kernel.truncate)
    fit = gwr_fit(obs, KernelConfig(bandwidth_neighbors=bandwidth, truncate=config.kernel.truncate))

    ok = np.isfinite(fit.residual)
    fit_regions = [r for r, good in zip(used, ok.tolist()) if good]
    cache_key = tuple(r.id for r in fit_regions)
    if weights_cache is not None and cache_key in weights_cache:
        weights = weights_cache[cache_key]
    else:
        weights = build_weights(
            fit_regions,
            config.weights.scheme,
            k=min(config.weights.k, len(fit_regions) - 1),
            cutoff=config.weights.cutoff,
            row_standardize=config.weights.row_standardize,
        )
        if weights_cache is not None:
            weights_cache[cache_key] = weights
    moran = morans_p(
        fit.residual[ok],
        weights,
        n_perm=config.moran_permutations,
        seed=derive_seed(config.seed, "moran", determinant),
    )
    verdict = classify_pattern(
        fit,
        moran,
        densities=[o.x for o in obs],
        thresholds=config.thresholds,
        inverted=config.inverted.get(determinant, False),
    )
    return DeterminantResult(
        determinant=determinant,
        fit=fit,
        moran=moran,
        verdict=verdict,
        n_observations=n,
        weights=weights,
    )


# ---------------------------------------------------------------------------
# Choropleth export


@dataclass
class ChoroplethLayer:
    values: dict[str, float]
    class_index: dict[str, int | None]
    breaks: list[float]
    counts: list[int]
    legend: list[str]


def export_choropleth(
    regions: Sequence[Region],
    values: Mapping[str, float],
    class_count: int = 7,
) -> tuple[bytes, ChoroplethLayer]:
    """Classify values into geometric intervals and emit a GeoJSON layer.

    Regions without a value carry class_index null.  Constant values fall
    back to a single class (with a warning in the layer legend).
    """
    valued = {rid: float(v) for rid, v in values.items() if v is not None and math.isfinite(v)}
    if not valued:
        raise DataError("choropleth export needs at least one valued region")
    arr = np.array(list(valued.values()))
    single_class = float(arr.min()) == float(arr.max())
    if single_class:
        breaks = np.array([float(arr.min()), float(arr.max())])
    else:
        breaks = geometric_intervals(arr, class_count)
    idx = assign_classes(arr, breaks)
    class_by_id = dict(zip(valued.keys(), (int(i) for i in idx)))
    counts = np.bincount(idx, minlength=len(breaks) - 1).tolist()
    legend = [
        f"{breaks[i]:.6g}-{breaks[i + 1]:.6g} ({counts[i]})" for i in range(len(breaks) - 1)
    ]
    if single_class:
        legend[0] += " [constant values: single class]"
    layer = ChoroplethLayer(
        values=valued,
        class_index={r.id: class_by_id.get(r.id) for r in regions},
        breaks=[float(b) for b in breaks],
        counts=counts,
        legend=legend,
    )
    extra = {
        rid: {
            "value": valued.get(rid),
            "class_index": layer.class_index.get(rid),
        }
        for rid in (r.id for r in regions)
    }
    blob = regions_to_geojson(
        regions,
        extra_properties=extra,
        foreign_members={
            "breaks": [float(f"{b:.9g}") for b in layer.breaks],
            "class_counts": counts,
            "legend": legend,
        },
    )
    return blob, layer


# ---------------------------------------------------------------------------
# Reports


VERDICT_COLUMNS = (
    "determinant",
    "sign",
    "strength",
    "trusted",
    "dominant_fraction",
    "moran_p",
    "r2",
    "bandwidth",
)


def verdicts_csv(results: Sequence[DeterminantResult]) -> bytes:
    lines = [",".join(VERDICT_COLUMNS)]
    for res in results:
        lines.append(
            ",".join(
                [
                    res.determinant,
                    res.verdict.sign,
                    res.verdict.strength,
                    str(res.verdict.sign_trusted).lower(),
                    f"{res.verdict.dominant_sign_fraction:.6g}",
                    f"{res.moran.p_value:.6g}",
                    f"{res.fit.r_squared:.6g}",
                    str(res.fit.bandwidth_neighbors),
                ]
            )
        )
    return ("\n".join(lines) + "\n").encode("utf-8")


def render_report(table: ProxyTable, results: Sequence[DeterminantResult]) -> str:
    out = []
    out.append("Proxy variable summary")
    out.append("======================")
    header = f"{'variable':<22}{'min':>12}{'average':>12}{'max':>12}{'std_dev':>12}{'cardinal':>10}{'skewness':>10}{'kurtosis':>10}"
    out.append(header)
    names = ("pop_dens",) + DETERMINANTS
    for name in names:
        vals = (
            [row.pop_dens for row in table.rows.values()]
            if name == "pop_dens"
            else list(table.values(name).values())
        )
        if not vals:
            out.append(f"{name:<22}{'(no data)':>12}")
            continue
        s = summary_stats(vals)
        skew = f"{s.skewness:.2f}" if s.skewness is not None else "n/a"
        kurt = f"{s.kurtosis:.2f}" if s.kurtosis is not None else "n/a"
        out.append(
            f"{name:<22}{s.minimum:>12.4g}{s.average:>12.4g}{s.maximum:>12.4g}"
            f"{s.std_dev:>12.4g}{s.cardinal:>10d}{skew:>10}{kurt:>10}"
        )
    out.append("")
    out.append("Concentric-pattern verdicts")
    out.append("===========================")
    out.append(
        f"{'determinant':<30}{'sign':<26}{'strength':<10}{'trusted':<9}"
        f"{'dom.frac':>9}{'moran_p':>9}{'R2':>7}{'bw':>5}"
    )
    for res in results:
        v = res.verdict
        mark = "" if v.sign_trusted else "*"
        out.append(
            f"{res.determinant:<30}{v.sign + mark:<26}{v.strength:<10}"
            f"{str(v.sign_trusted).lower():<9}{v.dominant_sign_fraction:>9.3f}"
            f"{res.moran.p_value:>9.3f}{res.fit.r_squared:>7.2f}{res.fit.bandwidth_neighbors:>5d}"
        )
    for name, lit_sign in REFERENCE_ONLY_DETERMINANTS:
        out.append(f"{name:<30}{lit_sign:<26}{'(no data)':<10}")
    out.append("")
    out.append("* slope signs untrusted: residuals show spatial autocorrelation,")
    out.append("  so density alone cannot explain the determinant (weak effect).")
    out.append("")
    out.append("Expected signs from prior literature (reference only):")
    for name, sign in LITERATURE_PATTERNS.items():
        out.append(f"  {name:<30} {sign}")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# The run itself


def run_pipeline(config: RunConfig) -> PipelineResult:
    """Execute ingest -> fits -> Moran -> classification; write artifacts.

    The output directory must not already contain a run.  On any error
    the staging directory is removed and nothing is published.
    """
    config.validate_paths()
    out_dir = Path(config.out_dir)
    if out_dir.exists() and any(out_dir.iterdir()):
        raise ConfigError(f"output directory {out_dir} is not empty")
    staging = out_dir.parent / (out_dir.name + ".staging")
    if staging.exists():
        shutil.rmtree(staging)
    staging.mkdir(parents=True)
    try:
        result = _run_into(config, staging)
        if out_dir.exists():
            out_dir.rmdir()
        os.replace(staging, out_dir)
        result.run_dir = out_dir
        return result
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise


def _run_into(config: RunConfig, staging: Path) -> PipelineResult:
    regions = parse_regions(
        Path(config.regions_path).read_bytes(), config.crs_mode, keys=config.region_keys
    )
    measurements = read_measurements_csv(
        Path(config.measurements_path).read_bytes(), config.crs_mode
    )
    table = build_proxy_table(
        regions,
        measurements,
        Path(config.socio_path).read_bytes(),
        IngestConfig(socio_columns=config.socio_columns),
        seed=config.seed,
    )
    (staging / "proxy_table.csv").write_bytes(write_proxy_csv(table))

    results = []
    weights_cache: dict = {}
    weights_bytes: dict[int, bytes] = {}
    for determinant in config.determinants:
        res = analyze_determinant(determinant, regions, table, config, weights_cache)
        results.append(res)
        (staging / f"fit_{determinant}.csv").write_bytes(write_fit_csv(res.fit))
        (staging / f"diagnostics_{determinant}.json").write_bytes(
            json.dumps(diagnostics_dict(res.fit, determinant), sort_keys=True, indent=1).encode()
        )
        (staging / f"moran_{determinant}.json").write_bytes(moran_result_json(res.moran))
        key = id(res.weights)
        if key not in weights_bytes:
            weights_bytes[key] = write_weights_csv(res.weights)
        (staging / f"weights_{determinant}.csv").write_bytes(weights_bytes[key])

    (staging / "verdicts.csv").write_bytes(verdicts_csv(results))
    (staging / "report.txt").write_text(render_report(table, results), encoding="utf-8")
    manifest = {
        "config": config.canonical_dict(),
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "versions": {
            "concentra": __version__,
            "numpy": np.__version__,
            "python": ".".join(str(v) for v in sys.version_info[:3]),
        },
        "proxy_cardinality": table.cardinality(),
        "warnings": list(table.warnings),
    }
    (staging / "run_manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )
    return PipelineResult(run_dir=staging, proxy_table=table, results=results)
