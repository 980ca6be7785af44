"""Spatial primitives: regions, distances, containment, spatial join.

Coordinates live either in planar meters or geographic degrees; the mode
is a dataset-level flag carried by every Point/Region.  All distances are
reported in meters (Euclidean for planar data, haversine with the mean
Earth radius for geographic data).

Containment uses even-odd ray casting over all rings, so polygon holes
and multi-part polygons need no special handling.  Points exactly on a
boundary edge count as inside; when regions touch, the smallest-area
region (then the lexicographically smaller id) wins the assignment.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConflictError, GeometryError, ParseError

PLANAR = "planar-meters"
GEOGRAPHIC = "geographic-degrees"
CRS_MODES = (PLANAR, GEOGRAPHIC)

EARTH_RADIUS_M = 6_371_000.0

Ring = tuple[tuple[float, float], ...]
Polygon = tuple[Ring, ...]  # (outer, hole, hole, ...)


@dataclass(frozen=True)
class Point:
    """A 2D location in the dataset's coordinate units."""

    x: float
    y: float
    crs_mode: str = PLANAR

    def __post_init__(self) -> None:
        if self.crs_mode not in CRS_MODES:
            raise ValueError(f"unknown crs_mode {self.crs_mode!r}")
        if self.crs_mode == GEOGRAPHIC:
            if not (-180.0 <= self.x <= 180.0 and -90.0 <= self.y <= 90.0):
                raise ValueError(
                    f"geographic point ({self.x}, {self.y}) outside lon/lat bounds"
                )


@dataclass(frozen=True)
class Region:
    """An areal unit: closed coordinate rings plus population density.

    ``polygons`` keeps the (outer, holes...) structure of the source
    geometry; ``rings`` is the flattened view of all rings, each closed
    (first vertex == last vertex, at least 4 vertices).  ``area_km2`` and
    the area-weighted ``centroid`` are computed at construction time
    unless supplied by the source data.
    """

    id: str
    polygons: tuple[Polygon, ...]
    crs_mode: str
    centroid: Point
    area_km2: float
    pop_density: float
    bbox: tuple[float, float, float, float] = field(repr=False, default=(0, 0, 0, 0))

    def __post_init__(self) -> None:
        for ring in self.rings:
            _check_ring(ring, self.id)
        if self.area_km2 <= 0:
            raise GeometryError(f"region {self.id!r}: area must be positive")
        if self.pop_density < 0:
            raise ValueError(f"region {self.id!r}: negative pop_density")
        xmin, ymin, xmax, ymax = _rings_bbox(self.rings)
        object.__setattr__(self, "bbox", (xmin, ymin, xmax, ymax))
        c = self.centroid
        if not (xmin <= c.x <= xmax and ymin <= c.y <= ymax):
            raise GeometryError(
                f"region {self.id!r}: centroid outside bounding box"
            )

    @property
    def rings(self) -> tuple[Ring, ...]:
        return tuple(ring for poly in self.polygons for ring in poly)


def _check_ring(ring: Ring, region_id: str) -> None:
    if len(ring) < 4:
        raise GeometryError(
            f"region {region_id!r}: ring has {len(ring)} vertices, need >= 4"
        )
    if ring[0] != ring[-1]:
        raise GeometryError(f"region {region_id!r}: ring is not closed")


def _rings_bbox(rings: Sequence[Ring]) -> tuple[float, float, float, float]:
    xs = [x for ring in rings for x, _ in ring]
    ys = [y for ring in rings for _, y in ring]
    return min(xs), min(ys), max(xs), max(ys)


# ---------------------------------------------------------------------------
# Ring geometry


def _ring_signed_area(ring: Ring) -> float:
    """Shoelace signed area in coordinate units squared (CCW positive)."""
    acc = 0.0
    for (x1, y1), (x2, y2) in zip(ring[:-1], ring[1:]):
        acc += x1 * y2 - x2 * y1
    return acc / 2.0


def _ring_centroid(ring: Ring) -> tuple[float, float]:
    """Area centroid of one ring (orientation independent)."""
    a = _ring_signed_area(ring)
    if a == 0.0:
        xs = [x for x, _ in ring[:-1]]
        ys = [y for _, y in ring[:-1]]
        return sum(xs) / len(xs), sum(ys) / len(ys)
    cx = cy = 0.0
    for (x1, y1), (x2, y2) in zip(ring[:-1], ring[1:]):
        cross = x1 * y2 - x2 * y1
        cx += (x1 + x2) * cross
        cy += (y1 + y2) * cross
    return cx / (6.0 * a), cy / (6.0 * a)


def _ring_spherical_area_m2(ring: Ring) -> float:
    """Approximate ellipsoid-free spherical ring area in square meters.

    Uses the spherical excess approximation for lon/lat rings (degrees):
    area = |R^2/2 * sum((lon2-lon1) * (2 + sin(lat1) + sin(lat2)))|.
    """
    acc = 0.0
    for (lon1, lat1), (lon2, lat2) in zip(ring[:-1], ring[1:]):
        acc += math.radians(lon2 - lon1) * (
            2.0 + math.sin(math.radians(lat1)) + math.sin(math.radians(lat2))
        )
    return abs(acc) * EARTH_RADIUS_M * EARTH_RADIUS_M / 2.0


def region_from_polygons(
    region_id: str,
    polygons: Sequence[Polygon],
    crs_mode: str,
    pop_density: float,
    area_km2: float | None = None,
) -> Region:
    """Build a Region from structured (outer, holes...) polygons.

    The centroid is the area-weighted centroid of the outer rings minus
    holes.  Area is derived from the geometry when not supplied: shoelace
    for planar data, spherical excess approximation for geographic data.
    """
    if not polygons:
        raise GeometryError(f"region {region_id!r}: no polygon geometry")
    total_area = 0.0  # coordinate units^2, holes subtracted
    cx_acc = cy_acc = 0.0
    area_m2 = 0.0
    for poly in polygons:
        if not poly:
            raise GeometryError(f"region {region_id!r}: empty polygon")
        for k, ring in enumerate(poly):
            _check_ring(ring, region_id)
            sign = 1.0 if k == 0 else -1.0
            a = abs(_ring_signed_area(ring))
            rcx, rcy = _ring_centroid(ring)
            total_area += sign * a
            cx_acc += sign * a * rcx
            cy_acc += sign * a * rcy
            if crs_mode == GEOGRAPHIC:
                area_m2 += sign * _ring_spherical_area_m2(ring)
            else:
                area_m2 += sign * a
    if total_area <= 0:
        raise GeometryError(f"region {region_id!r}: degenerate (zero area) geometry")
    centroid = Point(cx_acc / total_area, cy_acc / total_area, crs_mode)
    if area_km2 is None:
        area_km2 = area_m2 / 1e6
    return Region(
        id=region_id,
        polygons=tuple(
            tuple(tuple((float(x), float(y)) for x, y in ring) for ring in poly)
            for poly in polygons
        ),
        crs_mode=crs_mode,
        centroid=centroid,
        area_km2=float(area_km2),
        pop_density=float(pop_density),
    )


# ---------------------------------------------------------------------------
# GeoJSON ingest / emit


@dataclass(frozen=True)
class RegionPropertyKeys:
    """Configurable property names on GeoJSON features."""

    id: str = "id"
    pop_density: str = "pop_density"
    area_km2: str = "area_km2"


def parse_regions(
    source: bytes | str,
    crs_mode: str | None = None,
    keys: RegionPropertyKeys = RegionPropertyKeys(),
) -> list[Region]:
    """Parse a GeoJSON FeatureCollection of Polygon/MultiPolygon features.

    ``crs_mode`` may be omitted when the file carries a top-level
    ``crs_mode`` member (our own exports do); otherwise planar meters is
    assumed.  Raises ParseError / GeometryError naming the offending
    feature, and ConflictError on duplicate region ids.
    """
    try:
        doc = json.loads(source)
    except json.JSONDecodeError as exc:
        raise ParseError(f"region file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise ParseError("region file is not a GeoJSON FeatureCollection")
    if crs_mode is None:
        crs_mode = doc.get("crs_mode", PLANAR)
    if crs_mode not in CRS_MODES:
        raise ParseError(f"unknown crs_mode {crs_mode!r}")

    regions: list[Region] = []
    seen: set[str] = set()
    for idx, feature in enumerate(doc.get("features", [])):
        props = feature.get("properties") or {}
        rid = props.get(keys.id)
        label = repr(rid) if rid is not None else f"#{idx}"
        if rid is None:
            raise ParseError(f"feature {label}: missing {keys.id!r} property")
        rid = str(rid)
        if rid in seen:
            raise ConflictError(f"duplicate region id {rid!r}")
        seen.add(rid)
        if props.get(keys.pop_density) is None:
            raise ParseError(f"feature {label}: missing {keys.pop_density!r} property")
        pop_density = float(props[keys.pop_density])
        area = props.get(keys.area_km2)
        geom = feature.get("geometry") or {}
        gtype = geom.get("type")
        coords = geom.get("coordinates")
        try:
            if gtype == "Polygon":
                polys = [_coords_to_polygon(coords)]
            elif gtype == "MultiPolygon":
                polys = [_coords_to_polygon(p) for p in coords]
            else:
                raise ParseError(f"feature {label}: unsupported geometry {gtype!r}")
        except (TypeError, ValueError) as exc:
            raise ParseError(f"feature {label}: malformed geometry: {exc}") from exc
        try:
            regions.append(
                region_from_polygons(
                    rid,
                    polys,
                    crs_mode,
                    pop_density,
                    area_km2=float(area) if area is not None else None,
                )
            )
        except GeometryError as exc:
            raise GeometryError(f"feature {label}: {exc}") from exc
    return regions


def _coords_to_polygon(coords: object) -> Polygon:
    if not isinstance(coords, (list, tuple)) or not coords:
        raise ValueError("polygon must be a non-empty coordinate array")
    rings = []
    for ring in coords:
        rings.append(tuple((float(x), float(y)) for x, y in ring))
    return tuple(rings)


def _sig9(v: float) -> float:
    """Round to 9 significant digits for stable GeoJSON output."""
    return float(f"{v:.9g}")


def regions_to_geojson(
    regions: Sequence[Region],
    extra_properties: Mapping[str, Mapping[str, object]] | None = None,
    foreign_members: Mapping[str, object] | None = None,
    keys: RegionPropertyKeys = RegionPropertyKeys(),
) -> bytes:
    """Emit regions as a GeoJSON FeatureCollection (9-sig-digit floats).

    ``extra_properties`` maps region id -> extra feature properties
    (choropleth values, class indices, ...).  Foreign members are written
    at the collection level.
    """
    features = []
    for region in regions:
        props: dict[str, object] = {
            keys.id: region.id,
            keys.pop_density: _sig9(region.pop_density),
            keys.area_km2: _sig9(region.area_km2),
        }
        if extra_properties and region.id in extra_properties:
            for k, v in extra_properties[region.id].items():
                props[k] = _sig9(v) if isinstance(v, float) else v
        polys = [
            [[[_sig9(x), _sig9(y)] for x, y in ring] for ring in poly]
            for poly in region.polygons
        ]
        geometry = (
            {"type": "Polygon", "coordinates": polys[0]}
            if len(polys) == 1
            else {"type": "MultiPolygon", "coordinates": polys}
        )
        features.append({"type": "Feature", "properties": props, "geometry": geometry})
    doc: dict[str, object] = {"type": "FeatureCollection", "crs_mode": regions[0].crs_mode if regions else PLANAR}
    if foreign_members:
        doc.update(foreign_members)
    doc["features"] = features
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


# ---------------------------------------------------------------------------
# Distance


def distance(a: Point, b: Point) -> float:
    """Distance in meters (Euclidean planar, haversine geographic)."""
    if a.crs_mode != b.crs_mode:
        raise ValueError(f"mixed crs modes: {a.crs_mode!r} vs {b.crs_mode!r}")
    if a.crs_mode == PLANAR:
        return math.hypot(a.x - b.x, a.y - b.y)
    return _haversine_m(a.y, a.x, b.y, b.x)


def _haversine_m(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    phi1 = math.radians(lat1)
    phi2 = math.radians(lat2)
    dphi = math.radians(lat2 - lat1)
    dlam = math.radians(lon2 - lon1)
    h = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def distance_matrix(coords: np.ndarray, crs_mode: str) -> np.ndarray:
    """Pairwise distance matrix in meters for an (n, 2) coordinate array.

    Planar coordinates are (x, y) meters; geographic are (lon, lat)
    degrees.
    """
    pts = np.asarray(coords, dtype=float)
    if crs_mode == PLANAR:
        dx = pts[:, 0][:, None] - pts[:, 0][None, :]
        dy = pts[:, 1][:, None] - pts[:, 1][None, :]
        return np.hypot(dx, dy)
    lon = np.radians(pts[:, 0])
    lat = np.radians(pts[:, 1])
    dphi = lat[:, None] - lat[None, :]
    dlam = lon[:, None] - lon[None, :]
    h = np.sin(dphi / 2.0) ** 2 + np.cos(lat)[:, None] * np.cos(lat)[None, :] * np.sin(dlam / 2.0) ** 2
    np.clip(h, 0.0, 1.0, out=h)
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.sqrt(h))


# ---------------------------------------------------------------------------
# Containment


def _on_segment(px: float, py: float, x1: float, y1: float, x2: float, y2: float) -> bool:
    cross = (px - x1) * (y2 - y1) - (py - y1) * (x2 - x1)
    if cross != 0.0:
        return False
    return min(x1, x2) <= px <= max(x1, x2) and min(y1, y2) <= py <= max(y1, y2)


def point_in_polygon(p: Point, region: Region) -> bool:
    """Even-odd containment over all rings; boundary points are inside."""
    if p.crs_mode != region.crs_mode:
        raise ValueError("point and region use different crs modes")
    xmin, ymin, xmax, ymax = region.bbox
    if not (xmin <= p.x <= xmax and ymin <= p.y <= ymax):
        return False
    inside = False
    for ring in region.rings:
        for (x1, y1), (x2, y2) in zip(ring[:-1], ring[1:]):
            if _on_segment(p.x, p.y, x1, y1, x2, y2):
                return True
            if (y1 > p.y) != (y2 > p.y):
                x_cross = x1 + (p.y - y1) * (x2 - x1) / (y2 - y1)
                if p.x < x_cross:
                    inside = not inside
    return inside


# ---------------------------------------------------------------------------
# Spatial join


class _GridIndex:
    """Uniform-grid bounding-box index over region bboxes."""

    def __init__(self, regions: Sequence[Region]):
        self.regions = regions
        boxes = [r.bbox for r in regions]
        self.xmin = min(b[0] for b in boxes)
        self.ymin = min(b[1] for b in boxes)
        xmax = max(b[2] for b in boxes)
        ymax = max(b[3] for b in boxes)
        spans = sorted(max(b[2] - b[0], b[3] - b[1]) for b in boxes)
        median_span = spans[len(spans) // 2]
        self.cell = median_span if median_span > 0 else max(xmax - self.xmin, ymax - self.ymin, 1.0)
        self.nx = max(1, int((xmax - self.xmin) / self.cell) + 1)
        self.ny = max(1, int((ymax - self.ymin) / self.cell) + 1)
        self.cells: dict[tuple[int, int], list[int]] = {}
        for i, b in enumerate(boxes):
            for cx in range(self._ix(b[0]), self._ix(b[2]) + 1):
                for cy in range(self._iy(b[1]), self._iy(b[3]) + 1):
                    self.cells.setdefault((cx, cy), []).append(i)

    def _ix(self, x: float) -> int:
        return min(self.nx - 1, max(0, int((x - self.xmin) / self.cell)))

    def _iy(self, y: float) -> int:
        return min(self.ny - 1, max(0, int((y - self.ymin) / self.cell)))

    def candidates(self, x: float, y: float) -> list[int]:
        return self.cells.get((self._ix(x), self._iy(y)), [])

    def bbox_pairs(self) -> Iterable[tuple[int, int]]:
        """Yield index pairs (i < j) whose bounding boxes intersect."""
        seen: set[tuple[int, int]] = set()
        boxes = [r.bbox for r in self.regions]
        for members in self.cells.values():
            for a in range(len(members)):
                for b in range(a + 1, len(members)):
                    i, j = members[a], members[b]
                    if i > j:
                        i, j = j, i
                    if (i, j) in seen:
                        continue
                    seen.add((i, j))
                    bi, bj = boxes[i], boxes[j]
                    if bi[0] <= bj[2] and bj[0] <= bi[2] and bi[1] <= bj[3] and bj[1] <= bi[3]:
                        yield i, j


def spatial_join(
    points: Sequence[Point], regions: Sequence[Region]
) -> list[tuple[int, str | None]]:
    """Assign each point to its containing region.

    Regions are assumed non-overlapping; should several contain a point
    (shared boundaries), the smallest area wins, then the smaller id.
    Points contained by no region map to None.
    """
    if not regions:
        return [(i, None) for i in range(len(points))]
    index = _GridIndex(regions)
    out: list[tuple[int, str | None]] = []
    for i, p in enumerate(points):
        best: tuple[float, str] | None = None
        for ridx in index.candidates(p.x, p.y):
            region = regions[ridx]
            if point_in_polygon(p, region):
                key = (region.area_km2, region.id)
                if best is None or key < best:
                    best = key
        out.append((i, best[1] if best else None))
    return out
