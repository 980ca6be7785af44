"""Run configuration: TOML file loading plus command-line overrides.

The file is plain TOML tables; every knob has a default except the paths
and the seed (all randomness must flow from the explicit master seed, so
wall-clock entropy never enters a run).  Flags win over file values.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .autocorr import SCHEME_ALIASES, SCHEME_QUEEN
from .classify import ClassifierThresholds
from .errors import ConfigError
from .geo import CRS_MODES, PLANAR, RegionPropertyKeys
from .ingest import DETERMINANTS, SocioColumns

DEFAULT_INVERTED = {"fourg_diffusion_delay": True}


@dataclass(frozen=True)
class KernelSettings:
    truncate: bool = True
    bandwidth: int | None = None  # fixed neighbor count
    search_min: int = 8
    search_max: int = 120

    def __post_init__(self) -> None:
        if self.bandwidth is not None and self.bandwidth < 2:
            raise ConfigError("bandwidth must be >= 2")
        if self.search_min < 2 or self.search_max < self.search_min:
            raise ConfigError("invalid bandwidth search range")


@dataclass(frozen=True)
class WeightsSettings:
    scheme: str = SCHEME_QUEEN
    k: int = 8
    cutoff: float | None = None
    row_standardize: bool = True

    def __post_init__(self) -> None:
        if self.scheme not in SCHEME_ALIASES:
            raise ConfigError(f"unknown weights scheme {self.scheme!r}")
        if self.k < 1:
            raise ConfigError("weights k must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    regions_path: Path
    measurements_path: Path
    socio_path: Path
    out_dir: Path
    seed: int
    crs_mode: str = PLANAR
    determinants: tuple[str, ...] = DETERMINANTS
    kernel: KernelSettings = KernelSettings()
    weights: WeightsSettings = WeightsSettings()
    thresholds: ClassifierThresholds = ClassifierThresholds()
    inverted: dict[str, bool] = field(default_factory=lambda: dict(DEFAULT_INVERTED))
    classes: int = 7
    moran_permutations: int = 999
    region_keys: RegionPropertyKeys = RegionPropertyKeys()
    socio_columns: SocioColumns = SocioColumns()

    def __post_init__(self) -> None:
        if self.crs_mode not in CRS_MODES:
            raise ConfigError(f"unknown crs_mode {self.crs_mode!r}")
        unknown = [d for d in self.determinants if d not in DETERMINANTS]
        if unknown:
            raise ConfigError(f"unknown determinants {unknown}; valid: {list(DETERMINANTS)}")
        if not self.determinants:
            raise ConfigError("no determinants selected")
        if self.classes < 2:
            raise ConfigError("classes must be >= 2")
        if self.moran_permutations < 19:
            raise ConfigError("moran_permutations must be >= 19")

    def validate_paths(self) -> None:
        for label, path in (
            ("regions", self.regions_path),
            ("measurements", self.measurements_path),
            ("socio", self.socio_path),
        ):
            if not Path(path).is_file():
                raise ConfigError(f"{label} file does not exist: {path}")

    def canonical_dict(self) -> dict:
        """Config as a JSON-ready dict; excludes the output directory so
        two runs of the same analysis hash identically."""
        return {
            "paths": {
                "regions": str(self.regions_path),
                "measurements": str(self.measurements_path),
                "socio": str(self.socio_path),
            },
            "seed": self.seed,
            "crs_mode": self.crs_mode,
            "determinants": list(self.determinants),
            "kernel": {
                "truncate": self.kernel.truncate,
                "bandwidth": self.kernel.bandwidth,
                "search_min": self.kernel.search_min,
                "search_max": self.kernel.search_max,
            },
            "weights": {
                "scheme": SCHEME_ALIASES[self.weights.scheme],
                "k": self.weights.k,
                "cutoff": self.weights.cutoff,
                "row_standardize": self.weights.row_standardize,
            },
            "classify": {
                "alpha": self.thresholds.alpha,
                "strong_r2": self.thresholds.strong_r2,
                "sign_consistency": self.thresholds.sign_consistency,
                "classes": self.classes,
            },
            "moran": {"permutations": self.moran_permutations},
            "inverted": dict(sorted(self.inverted.items())),
            "region_keys": {
                "id": self.region_keys.id,
                "pop_density": self.region_keys.pop_density,
                "area_km2": self.region_keys.area_km2,
            },
            "socio_columns": {
                "id": self.socio_columns.id,
                "med_hh_income": self.socio_columns.med_hh_income,
                "pct_bachelors": self.socio_columns.pct_bachelors,
                "pct_dw_ownership": self.socio_columns.pct_dw_ownership,
            },
        }

    def config_hash(self) -> str:
        payload = json.dumps(self.canonical_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()


def _section(doc: dict, name: str) -> dict:
    sect = doc.get(name, {})
    if not isinstance(sect, dict):
        raise ConfigError(f"config section [{name}] must be a table")
    return sect


def config_from_dict(doc: dict, out_dir: Path | str | None = None) -> RunConfig:
    """Build a RunConfig from a parsed TOML document / manifest dict."""
    paths = _section(doc, "paths")
    run = _section(doc, "run")
    kernel = _section(doc, "kernel")
    weights = _section(doc, "weights")
    classify_s = _section(doc, "classify")
    moran = _section(doc, "moran")
    inverted_s = _section(doc, "inverted")
    region_keys = _section(doc, "region_keys")
    socio_cols = _section(doc, "socio_columns")

    seed = run.get("seed", doc.get("seed"))
    if seed is None:
        raise ConfigError("config must set a seed (run.seed)")
    missing = [k for k in ("regions", "measurements", "socio") if k not in paths]
    if missing:
        raise ConfigError(f"config [paths] missing {missing}")
    resolved_out = out_dir or paths.get("out")
    if resolved_out is None:
        raise ConfigError("no output directory (paths.out or --out)")

    determinants = run.get("determinants", doc.get("determinants", list(DETERMINANTS)))
    if isinstance(determinants, str):
        determinants = [determinants]

    bandwidth = kernel.get("bandwidth")
    search = kernel.get("search", [8, 120])
    if not (isinstance(search, (list, tuple)) and len(search) == 2):
        raise ConfigError("kernel.search must be [min, max]")

    inverted = dict(DEFAULT_INVERTED)
    for key, val in inverted_s.items():
        if key not in DETERMINANTS:
            raise ConfigError(f"inverted flag for unknown determinant {key!r}")
        inverted[key] = bool(val)

    try:
        return RunConfig(
            regions_path=Path(paths["regions"]),
            measurements_path=Path(paths["measurements"]),
            socio_path=Path(paths["socio"]),
            out_dir=Path(resolved_out),
            seed=int(seed),
            crs_mode=doc.get("crs_mode", run.get("crs_mode", PLANAR)),
            determinants=tuple(determinants),
            kernel=KernelSettings(
                truncate=bool(kernel.get("truncate", True)),
                bandwidth=int(bandwidth) if bandwidth is not None else None,
                search_min=int(search[0]),
                search_max=int(search[1]),
            ),
            weights=WeightsSettings(
                scheme=weights.get("scheme", SCHEME_QUEEN),
                k=int(weights.get("k", 8)),
                cutoff=float(weights["cutoff"]) if weights.get("cutoff") is not None else None,
                row_standardize=bool(weights.get("row_standardize", True)),
            ),
            thresholds=ClassifierThresholds(
                alpha=float(classify_s.get("alpha", 0.05)),
                strong_r2=float(classify_s.get("strong_r2", 0.50)),
                sign_consistency=float(classify_s.get("sign_consistency", 0.95)),
            ),
            inverted=inverted,
            classes=int(classify_s.get("classes", 7)),
            moran_permutations=int(moran.get("permutations", 999)),
            region_keys=RegionPropertyKeys(
                id=region_keys.get("id", "id"),
                pop_density=region_keys.get("pop_density", "pop_density"),
                area_km2=region_keys.get("area_km2", "area_km2"),
            ),
            socio_columns=SocioColumns(
                id=socio_cols.get("id", "id"),
                med_hh_income=socio_cols.get("med_hh_income", "med_hh_income"),
                pct_bachelors=socio_cols.get("pct_bachelors", "pct_bachelors"),
                pct_dw_ownership=socio_cols.get("pct_dw_ownership", "pct_dw_ownership"),
            ),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: Path | str, out_dir: Path | str | None = None) -> RunConfig:
    """Load a TOML config file, or a JSON run manifest (its 'config' key)."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file does not exist: {p}")
    raw = p.read_bytes()
    if p.suffix == ".json":
        try:
            doc = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"bad JSON manifest: {exc}") from exc
        doc = doc.get("config", doc)
        doc = _manifest_to_toml_shape(doc)
    else:
        try:
            doc = tomllib.loads(raw.decode("utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"bad TOML config: {exc}") from exc
    return config_from_dict(doc, out_dir=out_dir)


def _manifest_to_toml_shape(doc: dict) -> dict:
    """Map a manifest's canonical config dict back onto the TOML layout.

    The only structural difference is the kernel search range, stored as
    search_min/search_max in the manifest but [min, max] in TOML.
    """
    if "search_min" in doc.get("kernel", {}):
        kernel = dict(doc["kernel"])
        kernel["search"] = [kernel.pop("search_min"), kernel.pop("search_max")]
        doc = dict(doc)
        doc["kernel"] = kernel
    return doc
