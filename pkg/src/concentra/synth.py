"""Synthetic concentric cities with planted ground truth.

Square regions are laid out on concentric rings around a center; the
region at radial distance r gets density d0 * (1 + r/r0)^(-alpha), a
softened inverse-power decay (the softening keeps the center finite).
Determinant fields with known patterns (positive, negative, concave,
convex, pure noise) are planted on top, and a measurement cloud with a
known provider pool, planted download speeds, and a density-dependent
4G arrival schedule feeds the ingestion stage.  Everything is a pure
function of the configured seeds, so downstream stages can be checked
against the planted truth.

``write_bundle`` emits the exact region/measurement/socio file formats
the ingestion pipeline consumes, plus a truth.json describing what was
planted.
"""

from __future__ import annotations

import datetime as dt
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError
from .geo import PLANAR, Point, Region, point_in_polygon, region_from_polygons, regions_to_geojson
from .ingest import MeasurementRecord, write_measurements_csv
from .rng import substream

PATTERN_POSITIVE = "positive"
PATTERN_NEGATIVE = "negative"
PATTERN_CONCAVE = "concave"
PATTERN_CONVEX = "convex"
PATTERN_NOISE = "noise-only"
PATTERNS = (
    PATTERN_POSITIVE,
    PATTERN_NEGATIVE,
    PATTERN_CONCAVE,
    PATTERN_CONVEX,
    PATTERN_NOISE,
)

LINK_DENSITY = "linear-in-density"
LINK_LOG_DENSITY = "linear-in-log-density"


def _sig9(v: float) -> float:
    return float(f"{v:.9g}")


@dataclass(frozen=True)
class CityConfig:
    """Concentric-city layout and density-decay parameters."""

    center: Point = Point(0.0, 0.0, PLANAR)
    rings: int = 10
    regions_per_ring: int = 12
    d0: float = 5000.0  # peak density, inhab/km^2
    alpha: float = 1.5  # decay exponent
    r0: float = 2000.0  # softening radius, m
    region_size: float = 1000.0  # tile side, m
    seed: int = 0

    def __post_init__(self) -> None:
        if self.rings < 1 or self.regions_per_ring < 1:
            raise ConfigError("rings and regions_per_ring must be >= 1")
        if self.d0 <= 0 or self.r0 <= 0 or self.region_size <= 0:
            raise ConfigError("d0, r0 and region_size must be positive")
        if self.alpha < 0:
            raise ConfigError("alpha must be nonnegative")

    def n_regions(self) -> int:
        return 1 + self.rings * self.regions_per_ring

    def density_at(self, r: float) -> float:
        return self.d0 * (1.0 + r / self.r0) ** (-self.alpha)


@dataclass(frozen=True)
class PlantSpec:
    """A determinant field to plant over a generated city."""

    pattern: str = PATTERN_POSITIVE
    noise_sd: float = 0.0  # fraction of the signal's standard deviation
    link: str = LINK_LOG_DENSITY
    seed: int = 0

    def __post_init__(self) -> None:
        if self.pattern not in PATTERNS:
            raise ConfigError(f"unknown pattern {self.pattern!r}")
        if self.noise_sd < 0:
            raise ConfigError("noise_sd must be nonnegative")
        if self.link not in (LINK_DENSITY, LINK_LOG_DENSITY):
            raise ConfigError(f"unknown link {self.link!r}")


def _tile_centers(config: CityConfig) -> list[tuple[float, float]]:
    """Tile centers: one central square plus rings of equally spaced squares.

    Ring spacing is derived so axis-aligned tiles can never overlap: any
    two centers are at least sqrt(2) * region_size apart.
    """
    s = config.region_size
    m = config.regions_per_ring
    min_gap = math.sqrt(2.0) * s
    # 1% slack keeps the tightest ring strictly clear of the touching limit
    spacing = 1.01 * max(min_gap, min_gap / (2.0 * math.sin(math.pi / m)))
    centers = [(config.center.x, config.center.y)]
    for ring in range(1, config.rings + 1):
        radius = ring * spacing
        for k in range(m):
            theta = 2.0 * math.pi * k / m
            centers.append(
                (
                    config.center.x + radius * math.cos(theta),
                    config.center.y + radius * math.sin(theta),
                )
            )
    return centers


def _square_ring(cx: float, cy: float, side: float):
    h = side / 2.0
    corners = [
        (_sig9(cx - h), _sig9(cy - h)),
        (_sig9(cx + h), _sig9(cy - h)),
        (_sig9(cx + h), _sig9(cy + h)),
        (_sig9(cx - h), _sig9(cy + h)),
    ]
    corners.append(corners[0])
    return tuple(corners)


def generate_cities(configs: Sequence[CityConfig]) -> list[Region]:
    """Tile every configured city; densities sum over all centers' fields."""
    if not configs:
        raise ConfigError("need at least one city")
    per_city_centers = [_tile_centers(cfg) for cfg in configs]
    all_centers: list[tuple[float, float]] = []
    sides: list[float] = []
    for cfg, centers in zip(configs, per_city_centers):
        all_centers.extend(centers)
        sides.extend([cfg.region_size] * len(centers))
    pts = np.asarray(all_centers)
    # axis-aligned squares cannot overlap when both coordinate gaps are
    # not simultaneously below the mean of the two sides
    side_arr = np.asarray(sides)
    gap = (side_arr[:, None] + side_arr[None, :]) / 2.0
    dx = np.abs(pts[:, 0][:, None] - pts[:, 0][None, :])
    dy = np.abs(pts[:, 1][:, None] - pts[:, 1][None, :])
    overlap = (dx < gap) & (dy < gap)
    np.fill_diagonal(overlap, False)
    if overlap.any():
        i, j = np.argwhere(overlap)[0]
        raise ConfigError(f"tiles {i} and {j} overlap; adjust city geometry")

    regions: list[Region] = []
    idx = 0
    for cfg, centers in zip(configs, per_city_centers):
        for cx, cy in centers:
            density = 0.0
            for other in configs:
                r = math.hypot(cx - other.center.x, cy - other.center.y)
                density += other.density_at(r)
            regions.append(
                region_from_polygons(
                    f"R{idx:05d}",
                    [(_square_ring(cx, cy, cfg.region_size),)],
                    PLANAR,
                    pop_density=_sig9(density),
                )
            )
            idx += 1
    return regions


def generate_city(config: CityConfig) -> list[Region]:
    """Single-city convenience wrapper around generate_cities."""
    return generate_cities([config])


# ---------------------------------------------------------------------------
# Determinant planting


def plant_determinant(regions: Sequence[Region], spec: PlantSpec) -> dict[str, float]:
    """Planted determinant values per region id.

    positive/negative follow the configured link of density; concave and
    convex are quadratics in log density peaking (dipping) at the median
    log density.  Gaussian noise with sd = noise_sd * sd(signal) is
    added on top; the noise-only pattern is a unit-variance pure noise
    field.
    """
    dens = np.array([r.pop_density for r in regions], dtype=float)
    if np.unique(dens).size < 2:
        raise ValueError("planting needs at least 2 distinct densities")
    if spec.pattern == PATTERN_NOISE:
        signal = np.zeros(dens.size)
    else:
        if spec.pattern in (PATTERN_CONCAVE, PATTERN_CONVEX) or spec.link == LINK_LOG_DENSITY:
            if np.any(dens <= 0):
                raise ValueError("log-density links need positive densities")
        if spec.pattern == PATTERN_POSITIVE:
            signal = np.log(dens) if spec.link == LINK_LOG_DENSITY else dens.copy()
        elif spec.pattern == PATTERN_NEGATIVE:
            signal = -(np.log(dens) if spec.link == LINK_LOG_DENSITY else dens)
        else:
            logd = np.log(dens)
            hump = -((logd - np.median(logd)) ** 2)
            signal = hump if spec.pattern == PATTERN_CONCAVE else -hump
    rng = substream(spec.seed, "synth.plant", spec.pattern)
    if spec.pattern == PATTERN_NOISE:
        values = rng.normal(0.0, 1.0, dens.size)
    else:
        sd = float(signal.std())
        values = signal + rng.normal(0.0, spec.noise_sd * sd, dens.size)
    return {r.id: float(v) for r, v in zip(regions, values)}


def map_to_range(values: Mapping[str, float], lo: float, hi: float) -> dict[str, float]:
    """Affine map of planted values into [lo, hi] (sign structure kept)."""
    arr = np.array(list(values.values()), dtype=float)
    vmin, vmax = float(arr.min()), float(arr.max())
    if vmax == vmin:
        return {k: (lo + hi) / 2.0 for k in values}
    scale = (hi - lo) / (vmax - vmin)
    return {k: lo + (v - vmin) * scale for k, v in values.items()}


# ---------------------------------------------------------------------------
# Measurement cloud


@dataclass(frozen=True)
class MeasurementCloudConfig:
    """Knobs for the synthetic probe cloud.

    Installations per region grow with density; each installation emits
    ``records_per_installation`` probes.  A configured fraction of the
    regular probes moves faster than 3 m/s (and is therefore discarded
    by the stationary filter).  Operators cycle round-robin through a
    density-dependent pool so every pool member is observed whenever a
    region has at least pool-size stationary records.  4G arrives later
    in sparser regions (linear in -density over ``max_delay_days``), and
    each region emits a confirming 4G pair one day apart.
    """

    records_per_installation: int = 3
    installs_base: int = 1
    installs_per_density: float = 0.0  # extra installations per inhab/km^2
    moving_fraction: float = 0.0
    provider_pool_rule: tuple[tuple[float, int], ...] = ((0.0, 3),)
    study_start: str = "2013-04-01T00:00:00Z"
    max_delay_days: int = 400
    default_speed_kbps: float = 10_000.0
    speed_jitter_sd: float = 0.0

    def pool_size(self, density: float) -> int:
        size = 1
        for threshold, n_ops in sorted(self.provider_pool_rule):
            if density >= threshold:
                size = n_ops
        return size


def _uniform_point_in_region(region: Region, rng: np.random.Generator) -> Point:
    xmin, ymin, xmax, ymax = region.bbox
    for _ in range(1000):
        p = Point(
            float(rng.uniform(xmin, xmax)), float(rng.uniform(ymin, ymax)), region.crs_mode
        )
        if point_in_polygon(p, region):
            return p
    raise ConfigError(f"could not sample a point inside region {region.id!r}")


def arrival_days(
    regions: Sequence[Region], max_delay_days: int
) -> dict[str, int]:
    """Planted 4G arrival day per region: latest where density is lowest."""
    dens = np.array([r.pop_density for r in regions], dtype=float)
    dmin, dmax = float(dens.min()), float(dens.max())
    if dmax == dmin:
        return {r.id: 0 for r in regions}
    frac = (dmax - dens) / (dmax - dmin)
    return {
        r.id: int(round(max_delay_days * f)) for r, f in zip(regions, frac.tolist())
    }


def generate_measurements(
    regions: Sequence[Region],
    cloud: MeasurementCloudConfig = MeasurementCloudConfig(),
    seed: int = 0,
    speed_by_region: Mapping[str, float] | None = None,
) -> list[MeasurementRecord]:
    """Synthesize the probe cloud; per-region substreams keep it stable."""
    start = dt.datetime.fromisoformat(cloud.study_start.replace("Z", "+00:00")).timestamp()
    arrivals = arrival_days(regions, cloud.max_delay_days)
    roster = [f"OP{k:02d}" for k in range(1, 1 + max(cloud.pool_size(r.pop_density) for r in regions))]
    records: list[MeasurementRecord] = []
    for region in regions:
        rng = substream(seed, "synth.measurements", region.id)
        pool = roster[: cloud.pool_size(region.pop_density)]
        arrival_ts = start + arrivals[region.id] * 86_400.0 + 43_200.0
        speed_kbps = (
            speed_by_region[region.id]
            if speed_by_region is not None
            else cloud.default_speed_kbps
        )
        all_moving = cloud.moving_fraction >= 1.0
        # confirming 4G pair, one day apart
        for k in range(2):
            records.append(
                MeasurementRecord(
                    timestamp=arrival_ts + k * 86_400.0,
                    position=_uniform_point_in_region(region, rng),
                    device_speed=5.0 if all_moving else 0.0,
                    tech="4G",
                    download_kbps=max(speed_kbps, 1.0),
                    operator_id=pool[0],
                    installation_id=f"{region.id}-seed",
                )
            )
        n_inst = cloud.installs_base + int(cloud.installs_per_density * region.pop_density)
        n_regular = n_inst * cloud.records_per_installation
        n_moving = int(round(cloud.moving_fraction * n_regular))
        moving_flags = np.zeros(n_regular, dtype=bool)
        moving_flags[rng.permutation(n_regular)[:n_moving]] = True
        rec_idx = 0
        for inst in range(n_inst):
            for _ in range(cloud.records_per_installation):
                jitter = (
                    float(rng.normal(0.0, cloud.speed_jitter_sd))
                    if cloud.speed_jitter_sd > 0
                    else 0.0
                )
                records.append(
                    MeasurementRecord(
                        timestamp=arrival_ts + float(rng.uniform(0.0, 60 * 86_400.0)),
                        position=_uniform_point_in_region(region, rng),
                        device_speed=float(rng.uniform(3.5, 15.0))
                        if moving_flags[rec_idx]
                        else float(rng.uniform(0.0, 3.0)),
                        tech="4G",
                        download_kbps=max(speed_kbps + jitter, 1.0),
                        operator_id=pool[rec_idx % len(pool)],
                        installation_id=f"{region.id}-i{inst:04d}",
                    )
                )
                rec_idx += 1
    return records


# ---------------------------------------------------------------------------
# Bundle writer


SOCIO_PROXIES = ("med_hh_income", "pct_bachelors", "pct_dw_ownership")
SOCIO_RANGES = {
    "med_hh_income": (10_000.0, 80_000.0),
    "pct_bachelors": (0.02, 0.75),
    "pct_dw_ownership": (0.05, 0.98),
}
SPEED_RANGE = (1_000.0, 50_000.0)


def write_bundle(
    out_dir: Path | str,
    cities: CityConfig | Sequence[CityConfig],
    plant_specs: Mapping[str, PlantSpec] | None = None,
    cloud: MeasurementCloudConfig = MeasurementCloudConfig(),
    seed: int = 0,
) -> dict[str, Path]:
    """Generate a complete input bundle the pipeline can consume.

    ``plant_specs`` maps socio proxy names (med_hh_income, pct_bachelors,
    pct_dw_ownership) or med_speed_mobile to plant specifications.
    Planted socio fields are affinely mapped into plausible ranges, which
    preserves the planted sign structure.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    city_list = [cities] if isinstance(cities, CityConfig) else list(cities)
    regions = generate_cities(city_list)
    plant_specs = dict(plant_specs or {})

    planted: dict[str, dict[str, float]] = {}
    for name, spec in plant_specs.items():
        if name not in SOCIO_PROXIES and name != "med_speed_mobile":
            raise ConfigError(f"cannot plant determinant {name!r}")
        raw = plant_determinant(regions, spec)
        lo, hi = SOCIO_RANGES.get(name, SPEED_RANGE)
        planted[name] = map_to_range(raw, lo, hi)

    speed_by_region = planted.get("med_speed_mobile")
    measurements = generate_measurements(
        regions, cloud, seed=seed, speed_by_region=speed_by_region
    )

    socio_lines = ["id,med_hh_income,pct_bachelors,pct_dw_ownership"]
    for region in regions:
        cells = [region.id]
        for proxy in SOCIO_PROXIES:
            v = planted.get(proxy, {}).get(region.id)
            cells.append("" if v is None else f"{v:.12g}")
        socio_lines.append(",".join(cells))

    paths = {
        "regions": out / "regions.geojson",
        "measurements": out / "measurements.csv",
        "socio": out / "socio.csv",
        "truth": out / "truth.json",
    }
    paths["regions"].write_bytes(regions_to_geojson(regions))
    paths["measurements"].write_bytes(write_measurements_csv(measurements))
    paths["socio"].write_text("\n".join(socio_lines) + "\n", encoding="utf-8")
    truth = {
        "seed": seed,
        "n_regions": len(regions),
        "cities": [
            {
                "center": [c.center.x, c.center.y],
                "rings": c.rings,
                "regions_per_ring": c.regions_per_ring,
                "d0": c.d0,
                "alpha": c.alpha,
                "r0": c.r0,
                "region_size": c.region_size,
                "seed": c.seed,
            }
            for c in city_list
        ],
        "planted": {
            name: {"pattern": spec.pattern, "noise_sd": spec.noise_sd, "link": spec.link, "seed": spec.seed}
            for name, spec in plant_specs.items()
        },
        "provider_pool_rule": [list(rule) for rule in cloud.provider_pool_rule],
        "max_delay_days": cloud.max_delay_days,
        "arrival_days": arrival_days(regions, cloud.max_delay_days),
    }
    paths["truth"].write_text(
        json.dumps(truth, sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )
    return paths
