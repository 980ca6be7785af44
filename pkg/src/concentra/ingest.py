"""Measurement/socio-economic ingestion and proxy-variable derivation.

Turns crowdsourced network probes plus per-region socio-economic tables
into the per-region proxy table the regression stage consumes:

  pop_dens               inhabitants per km^2 (from the region layer)
  mbp_number             distinct mobile broadband providers observed
  med_speed_mobile       median download speed (kbps), one record sampled
                         per installation to curb heavy users
  fourg_diffusion_delay  days between the first confirmed 4G sighting in
                         the whole dataset and in the region
  pct_dw_ownership       share of owner-occupied dwellings, [0, 1]
  pct_bachelors          share of population with a bachelor's degree
  med_hh_income          median household income (euros)

Filtering rules: records from devices moving faster than 3 m/s are
dropped (boundary kept), and a 4G first sighting only counts when a
second 4G record follows within (t, t + 7 days].  Regions with no
qualifying data stay missing per proxy; nothing is imputed.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ConflictError, DataError, ParseError
from .geo import Point, Region, spatial_join
from .rng import substream

TECH_2G = "2G"
TECH_3G = "3G"
TECH_4G = "4G"
TECH_OTHER = "other"
TECH_VALUES = (TECH_2G, TECH_3G, TECH_4G, TECH_OTHER)

DETERMINANTS = (
    "mbp_number",
    "med_speed_mobile",
    "fourg_diffusion_delay",
    "pct_dw_ownership",
    "pct_bachelors",
    "med_hh_income",
)

MEASUREMENT_COLUMNS = (
    "timestamp_iso8601",
    "lat",
    "lon",
    "device_speed_mps",
    "tech",
    "download_kbps",
    "operator_id",
    "installation_id",
)


@dataclass(frozen=True)
class MeasurementRecord:
    """One crowdsourced network probe."""

    timestamp: float  # UTC seconds
    position: Point
    device_speed: float  # m/s
    tech: str
    download_kbps: float
    operator_id: str
    installation_id: str

    def __post_init__(self) -> None:
        if self.device_speed < 0:
            raise ValueError("negative device_speed")
        if self.download_kbps < 0:
            raise ValueError("negative download_kbps")
        if self.tech not in TECH_VALUES:
            raise ValueError(f"unknown tech {self.tech!r}")


@dataclass(frozen=True)
class SocioColumns:
    """Column mapping for the socio-economic CSV."""

    id: str = "id"
    med_hh_income: str = "med_hh_income"
    pct_bachelors: str = "pct_bachelors"
    pct_dw_ownership: str = "pct_dw_ownership"


@dataclass(frozen=True)
class IngestConfig:
    v_max: float = 3.0  # m/s, records at exactly v_max are kept
    confirm_window_days: int = 7
    socio_columns: SocioColumns = SocioColumns()


def _parse_iso8601(text: str) -> float:
    try:
        stamp = dt.datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError as exc:
        raise ParseError(f"bad timestamp {text!r}: {exc}") from exc
    if stamp.tzinfo is None:
        stamp = stamp.replace(tzinfo=dt.timezone.utc)
    return stamp.timestamp()


def _epoch_to_date(ts: float) -> dt.date:
    return dt.datetime.fromtimestamp(ts, tz=dt.timezone.utc).date()


def read_measurements_csv(source: bytes | str, crs_mode: str) -> list[MeasurementRecord]:
    """Parse the measurement CSV (header per MEASUREMENT_COLUMNS).

    The lat/lon columns hold degrees in geographic mode and y/x meters in
    planar mode.
    """
    text = source.decode("utf-8") if isinstance(source, bytes) else source
    reader = csv.DictReader(io.StringIO(text))
    missing = [c for c in MEASUREMENT_COLUMNS if c not in (reader.fieldnames or [])]
    if missing:
        raise ParseError(f"measurement CSV missing columns {missing}")
    records = []
    for lineno, row in enumerate(reader, start=2):
        try:
            tech = row["tech"].strip()
            records.append(
                MeasurementRecord(
                    timestamp=_parse_iso8601(row["timestamp_iso8601"]),
                    position=Point(float(row["lon"]), float(row["lat"]), crs_mode),
                    device_speed=float(row["device_speed_mps"]),
                    tech=tech if tech in TECH_VALUES else TECH_OTHER,
                    download_kbps=float(row["download_kbps"]),
                    operator_id=row["operator_id"].strip(),
                    installation_id=row["installation_id"].strip(),
                )
            )
        except (ValueError, KeyError) as exc:
            raise ParseError(f"measurement CSV line {lineno}: {exc}") from exc
    return records


def write_measurements_csv(records: Sequence[MeasurementRecord]) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MEASUREMENT_COLUMNS)
    for r in records:
        stamp = dt.datetime.fromtimestamp(r.timestamp, tz=dt.timezone.utc)
        writer.writerow(
            [
                stamp.strftime("%Y-%m-%dT%H:%M:%SZ"),
                f"{r.position.y:.9g}",
                f"{r.position.x:.9g}",
                f"{r.device_speed:.9g}",
                r.tech,
                f"{r.download_kbps:.9g}",
                r.operator_id,
                r.installation_id,
            ]
        )
    return buf.getvalue().encode("utf-8")


# ---------------------------------------------------------------------------
# Filtering and per-region proxies


def filter_stationary(
    records: Iterable[MeasurementRecord], v_max: float = 3.0
) -> list[MeasurementRecord]:
    """Keep records from devices moving at most v_max (boundary kept)."""
    return [r for r in records if r.device_speed <= v_max]


def first_valid_4g(
    records: Iterable[MeasurementRecord], confirm_window_days: int = 7
) -> dt.date | None:
    """First 4G sighting confirmed by a second 4G record within a week.

    Scans 4G timestamps in order; a sighting at t is valid when another
    4G record exists in (t, t + window].  A duplicate at the same instant
    does not confirm.  Returns the UTC date of the first valid sighting,
    or None.
    """
    times = sorted(r.timestamp for r in records if r.tech == TECH_4G)
    window = confirm_window_days * 86_400.0
    for i, t in enumerate(times):
        for t2 in times[i + 1 :]:
            if t2 <= t:
                continue
            if t2 <= t + window:
                return _epoch_to_date(t)
            break
    return None


def diffusion_delay(region_first: dt.date | None, country_first: dt.date) -> int | None:
    """Day difference between the country-wide and regional 4G arrival."""
    if region_first is None:
        return None
    delta = (region_first - country_first).days
    if delta < 0:
        raise DataError(
            f"region 4G date {region_first} precedes country-wide date {country_first}"
        )
    return delta


def provider_count(records: Sequence[MeasurementRecord]) -> int | None:
    """Distinct operators (MNOs and MVNOs alike) observed in the region."""
    if not records:
        return None
    return len({r.operator_id for r in records})


def median_speed(
    records: Sequence[MeasurementRecord], rng: np.random.Generator
) -> float | None:
    """Median download speed over one random record per installation.

    Sampling one record per installation keeps heavy measurers from
    dominating the statistic.  The draw order is fixed (installations
    sorted, records sorted by timestamp) so a given generator state
    yields a reproducible median.
    """
    by_install: dict[str, list[MeasurementRecord]] = {}
    for r in records:
        by_install.setdefault(r.installation_id, []).append(r)
    if not by_install:
        return None
    draws = []
    for install_id in sorted(by_install):
        recs = sorted(by_install[install_id], key=lambda r: (r.timestamp, r.download_kbps))
        draws.append(recs[int(rng.integers(len(recs)))].download_kbps)
    draws.sort()
    mid = len(draws) // 2
    if len(draws) % 2 == 1:
        return draws[mid]
    return (draws[mid - 1] + draws[mid]) / 2.0


# ---------------------------------------------------------------------------
# Summary statistics


@dataclass(frozen=True)
class SummaryStats:
    """Per-variable summary row: spread, count, and shape.

    Kurtosis is the non-excess convention (normal ~ 3); values below 3
    flag light tails, above 3 heavy tails.  Skewness/kurtosis use
    population central moments and are None for zero-variance input.
    """

    minimum: float
    average: float
    maximum: float
    std_dev: float
    cardinal: int
    skewness: float | None
    kurtosis: float | None


def summary_stats(values: Iterable[float | None]) -> SummaryStats:
    xs = np.asarray(
        [v for v in values if v is not None and math.isfinite(v)], dtype=float
    )
    if xs.size == 0:
        raise DataError("summary_stats: no non-missing values")
    mean = float(xs.mean())
    m2 = float(((xs - mean) ** 2).mean())
    skew = kurt = None
    if m2 > 0:
        m3 = float(((xs - mean) ** 3).mean())
        m4 = float(((xs - mean) ** 4).mean())
        skew = m3 / m2**1.5
        kurt = m4 / m2**2
    return SummaryStats(
        minimum=float(xs.min()),
        average=mean,
        maximum=float(xs.max()),
        std_dev=math.sqrt(m2),
        cardinal=int(xs.size),
        skewness=skew,
        kurtosis=kurt,
    )


# ---------------------------------------------------------------------------
# Socio-economic table


def read_socio_csv(
    source: bytes | str, columns: SocioColumns = SocioColumns()
) -> dict[str, dict[str, float | None]]:
    """Read the socio-economic CSV keyed by region id.

    Empty cells become None.  Duplicate ids raise ConflictError.
    """
    text = source.decode("utf-8") if isinstance(source, bytes) else source
    reader = csv.DictReader(io.StringIO(text))
    fields = reader.fieldnames or []
    wanted = {
        "med_hh_income": columns.med_hh_income,
        "pct_bachelors": columns.pct_bachelors,
        "pct_dw_ownership": columns.pct_dw_ownership,
    }
    if columns.id not in fields:
        raise ParseError(f"socio CSV missing id column {columns.id!r}")
    absent = [col for col in wanted.values() if col not in fields]
    if absent:
        raise ParseError(f"socio CSV missing columns {absent}")
    rows: dict[str, dict[str, float | None]] = {}
    for lineno, row in enumerate(reader, start=2):
        rid = row[columns.id].strip()
        if rid in rows:
            raise ConflictError(f"socio CSV: duplicate region id {rid!r}")
        parsed: dict[str, float | None] = {}
        for proxy, col in wanted.items():
            cell = (row[col] or "").strip()
            if cell == "":
                parsed[proxy] = None
                continue
            try:
                value = float(cell)
            except ValueError as exc:
                raise ParseError(f"socio CSV line {lineno}, {col!r}: {exc}") from exc
            if proxy.startswith("pct_") and not (0.0 <= value <= 1.0):
                raise DataError(
                    f"socio CSV line {lineno}: {col!r}={value} outside [0, 1]"
                )
            parsed[proxy] = value
        rows[rid] = parsed
    return rows


# ---------------------------------------------------------------------------
# Proxy table


@dataclass(frozen=True)
class ProxyRow:
    pop_dens: float
    mbp_number: float | None = None
    med_speed_mobile: float | None = None
    fourg_diffusion_delay: float | None = None
    pct_dw_ownership: float | None = None
    pct_bachelors: float | None = None
    med_hh_income: float | None = None

    def get(self, name: str) -> float | None:
        return getattr(self, name)


@dataclass
class ProxyTable:
    """Per-region proxy values with missing cells preserved."""

    rows: dict[str, ProxyRow]
    warnings: list[str] = field(default_factory=list)

    def values(self, name: str) -> dict[str, float]:
        out = {}
        for rid, row in self.rows.items():
            v = row.get(name)
            if v is not None:
                out[rid] = v
        return out

    def cardinality(self) -> dict[str, int]:
        counts = {"pop_dens": len(self.rows)}
        for name in DETERMINANTS:
            counts[name] = len(self.values(name))
        return counts


def build_proxy_table(
    regions: Sequence[Region],
    measurements: Sequence[MeasurementRecord],
    socio_csv: bytes | str,
    config: IngestConfig = IngestConfig(),
    seed: int = 0,
) -> ProxyTable:
    """Join socio columns and derive measurement proxies per region.

    Socio rows with unknown region ids are dropped with a warning.  The
    per-installation sampling RNG is partitioned per region id, so the
    result does not depend on processing order.
    """
    socio = read_socio_csv(socio_csv, config.socio_columns)
    region_ids = {r.id for r in regions}
    warnings = [
        f"socio row for unknown region id {rid!r} dropped"
        for rid in sorted(set(socio) - region_ids)
    ]

    stationary = filter_stationary(measurements, config.v_max)
    assignments = spatial_join([r.position for r in stationary], regions)
    per_region: dict[str, list[MeasurementRecord]] = {r.id: [] for r in regions}
    for idx, rid in assignments:
        if rid is not None:
            per_region[rid].append(stationary[idx])

    first_dates: dict[str, dt.date | None] = {
        r.id: first_valid_4g(per_region[r.id], config.confirm_window_days)
        for r in regions
    }
    valid_dates = [d for d in first_dates.values() if d is not None]
    country_first = min(valid_dates) if valid_dates else None

    rows: dict[str, ProxyRow] = {}
    for region in regions:
        recs = per_region[region.id]
        socio_row = socio.get(region.id, {})
        speed_recs = [r for r in recs if r.download_kbps > 0]
        rng = substream(seed, "ingest.sampling", region.id)
        delay = (
            diffusion_delay(first_dates[region.id], country_first)
            if country_first is not None
            else None
        )
        rows[region.id] = ProxyRow(
            pop_dens=region.pop_density,
            mbp_number=provider_count(recs),
            med_speed_mobile=median_speed(speed_recs, rng),
            fourg_diffusion_delay=delay,
            pct_dw_ownership=socio_row.get("pct_dw_ownership"),
            pct_bachelors=socio_row.get("pct_bachelors"),
            med_hh_income=socio_row.get("med_hh_income"),
        )
    return ProxyTable(rows=rows, warnings=warnings)


PROXY_COLUMNS = ("region_id", "pop_dens") + DETERMINANTS


def write_proxy_csv(table: ProxyTable) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(PROXY_COLUMNS)
    for rid in sorted(table.rows):
        row = table.rows[rid]
        cells = [rid, f"{row.pop_dens:.12g}"]
        for name in DETERMINANTS:
            v = row.get(name)
            cells.append("" if v is None else f"{v:.12g}")
        writer.writerow(cells)
    return buf.getvalue().encode("utf-8")


def read_proxy_csv(source: bytes | str) -> ProxyTable:
    text = source.decode("utf-8") if isinstance(source, bytes) else source
    reader = csv.DictReader(io.StringIO(text))
    missing = [c for c in PROXY_COLUMNS if c not in (reader.fieldnames or [])]
    if missing:
        raise ParseError(f"proxy CSV missing columns {missing}")
    rows: dict[str, ProxyRow] = {}
    for lineno, row in enumerate(reader, start=2):
        rid = row["region_id"]
        if rid in rows:
            raise ConflictError(f"proxy CSV: duplicate region id {rid!r}")
        try:
            kwargs = {"pop_dens": float(row["pop_dens"])}
            for name in DETERMINANTS:
                cell = (row[name] or "").strip()
                kwargs[name] = float(cell) if cell else None
        except ValueError as exc:
            raise ParseError(f"proxy CSV line {lineno}: {exc}") from exc
        rows[rid] = ProxyRow(**kwargs)
    return ProxyTable(rows=rows)
