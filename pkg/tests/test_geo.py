import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from concentra.errors import ConflictError, GeometryError, ParseError
from concentra.geo import (
    GEOGRAPHIC,
    PLANAR,
    Point,
    distance,
    distance_matrix,
    parse_regions,
    point_in_polygon,
    regions_to_geojson,
    spatial_join,
)

from conftest import feature, feature_collection, grid_regions, square_region, square_ring


class TestParseRegions:
    def test_unit_square(self, unit_square_geojson):
        (region,) = parse_regions(unit_square_geojson, PLANAR)
        assert region.centroid.x == pytest.approx(0.5)
        assert region.centroid.y == pytest.approx(0.5)
        # shoelace area in coordinate units squared
        assert region.area_km2 * 1e6 == pytest.approx(1.0)
        assert region.pop_density == 100.0

    def test_square_with_hole_area(self):
        # hole covers a quarter of the outer square
        outer = square_ring(0, 0, 2)
        hole = square_ring(0.5, 0.5, 1)
        blob = feature_collection(
            [
                {
                    "type": "Feature",
                    "properties": {"id": "H1", "pop_density": 10.0},
                    "geometry": {
                        "type": "Polygon",
                        "coordinates": [
                            [list(p) for p in outer],
                            [list(p) for p in hole],
                        ],
                    },
                }
            ]
        )
        (region,) = parse_regions(blob, PLANAR)
        assert region.area_km2 * 1e6 == pytest.approx(3.0)

    def test_area_property_wins_over_geometry(self):
        blob = feature_collection([feature("A1", [square_ring(0, 0, 1)], area=42.0)])
        (region,) = parse_regions(blob, PLANAR)
        assert region.area_km2 == 42.0

    def test_duplicate_ids_conflict(self):
        blob = feature_collection(
            [
                feature("D1", [square_ring(0, 0, 1)]),
                feature("D1", [square_ring(2, 0, 1)]),
            ]
        )
        with pytest.raises(ConflictError, match="D1"):
            parse_regions(blob, PLANAR)

    def test_unclosed_ring_names_feature(self):
        ring = [[0, 0], [1, 0], [1, 1], [0, 1]]  # not closed
        blob = feature_collection(
            [
                {
                    "type": "Feature",
                    "properties": {"id": "BAD", "pop_density": 1.0},
                    "geometry": {"type": "Polygon", "coordinates": [ring]},
                }
            ]
        )
        with pytest.raises(GeometryError, match="BAD"):
            parse_regions(blob, PLANAR)

    def test_malformed_geometry(self):
        blob = feature_collection(
            [
                {
                    "type": "Feature",
                    "properties": {"id": "M1", "pop_density": 1.0},
                    "geometry": {"type": "LineString", "coordinates": [[0, 0], [1, 1]]},
                }
            ]
        )
        with pytest.raises(ParseError, match="M1"):
            parse_regions(blob, PLANAR)

    def test_not_json(self):
        with pytest.raises(ParseError):
            parse_regions(b"definitely not json", PLANAR)

    def test_missing_density(self):
        blob = feature_collection(
            [
                {
                    "type": "Feature",
                    "properties": {"id": "N1"},
                    "geometry": {
                        "type": "Polygon",
                        "coordinates": [[list(p) for p in square_ring(0, 0, 1)]],
                    },
                }
            ]
        )
        with pytest.raises(ParseError, match="pop_density"):
            parse_regions(blob, PLANAR)

    def test_geographic_area_spherical_excess(self):
        # 1x1 degree cell on the equator; exact spherical area of the
        # lat/lon rectangle is R^2 * dlon * (sin lat2 - sin lat1)
        ring = [[0, 0], [1, 0], [1, 1], [0, 1], [0, 0]]
        blob = feature_collection(
            [
                {
                    "type": "Feature",
                    "properties": {"id": "G1", "pop_density": 5.0},
                    "geometry": {"type": "Polygon", "coordinates": [ring]},
                }
            ]
        )
        (region,) = parse_regions(blob, GEOGRAPHIC)
        r = 6_371_000.0
        exact_km2 = r * r * math.radians(1.0) * math.sin(math.radians(1.0)) / 1e6
        assert region.area_km2 == pytest.approx(exact_km2, rel=1e-3)

    def test_multipolygon_roundtrip(self):
        regions = grid_regions(3, 3)
        blob = regions_to_geojson(regions)
        back = parse_regions(blob)
        assert [r.id for r in back] == [r.id for r in regions]
        for a, b in zip(regions, back):
            assert a.rings == b.rings
            assert a.pop_density == b.pop_density


class TestDistance:
    def test_planar_345(self):
        assert distance(Point(0, 0), Point(3, 4)) == pytest.approx(5.0)

    def test_identity(self):
        p = Point(12.5, -3.25)
        assert distance(p, p) == 0.0

    def test_haversine_one_degree_equator(self):
        # independent evaluation: R * dlambda for points on the equator
        expected = 6_371_000.0 * math.pi / 180.0
        a = Point(0.0, 0.0, GEOGRAPHIC)
        b = Point(1.0, 0.0, GEOGRAPHIC)
        assert distance(a, b) == pytest.approx(expected, rel=1e-9)

    def test_mixed_modes_rejected(self):
        with pytest.raises(ValueError):
            distance(Point(0, 0, PLANAR), Point(0, 0, GEOGRAPHIC))

    def test_matrix_matches_pairwise(self):
        rng = np.random.default_rng(5)
        pts = [Point(float(x), float(y)) for x, y in rng.uniform(0, 100, (12, 2))]
        coords = np.array([[p.x, p.y] for p in pts])
        mat = distance_matrix(coords, PLANAR)
        for i, a in enumerate(pts):
            for j, b in enumerate(pts):
                assert mat[i, j] == pytest.approx(distance(a, b), abs=1e-9)

    def test_geographic_matrix_matches_pairwise(self):
        rng = np.random.default_rng(6)
        lonlat = np.column_stack([rng.uniform(-30, 30, 10), rng.uniform(-60, 60, 10)])
        pts = [Point(float(x), float(y), GEOGRAPHIC) for x, y in lonlat]
        mat = distance_matrix(lonlat, GEOGRAPHIC)
        for i, a in enumerate(pts):
            for j, b in enumerate(pts):
                assert mat[i, j] == pytest.approx(distance(a, b), abs=1e-6)

    @given(
        st.tuples(
            st.floats(-1e6, 1e6), st.floats(-1e6, 1e6),
            st.floats(-1e6, 1e6), st.floats(-1e6, 1e6),
        )
    )
    def test_symmetric_nonnegative(self, xy):
        a = Point(xy[0], xy[1])
        b = Point(xy[2], xy[3])
        d1, d2 = distance(a, b), distance(b, a)
        assert d1 == d2 >= 0.0
        if (a.x, a.y) == (b.x, b.y):
            assert d1 <= 1e-9


class TestPointInPolygon:
    def test_inside_outside(self):
        sq = square_region("S", 0, 0, 1)
        assert point_in_polygon(Point(0.5, 0.5), sq)
        assert not point_in_polygon(Point(2, 2), sq)

    def test_boundary_counts_inside(self):
        sq = square_region("S", 0, 0, 1)
        assert point_in_polygon(Point(1.0, 0.5), sq)
        assert point_in_polygon(Point(0.0, 0.0), sq)

    def test_hole_is_outside(self):
        from concentra.geo import region_from_polygons

        region = region_from_polygons(
            "H",
            [(square_ring(0, 0, 3), square_ring(1, 1, 1))],
            PLANAR,
            pop_density=1.0,
        )
        assert not point_in_polygon(Point(1.5, 1.5), region)
        assert point_in_polygon(Point(0.5, 0.5), region)


class TestSpatialJoin:
    def test_basic_assignment(self):
        regions = [square_region("A", 0, 0, 1), square_region("B", 2, 0, 1)]
        pts = [Point(0.5, 0.5), Point(2.5, 0.5), Point(5, 5)]
        assert spatial_join(pts, regions) == [(0, "A"), (1, "B"), (2, None)]

    def test_shared_edge_smaller_area_wins(self):
        big = square_region("BIG", 0, 0, 2)
        small = square_region("ASM", 2, 0, 1)  # shares edge x=2 segment
        out = spatial_join([Point(2.0, 0.5)], [big, small])
        assert out == [(0, "ASM")]

    def test_tie_broken_by_id(self):
        left = square_region("B", 0, 0, 1)
        right = square_region("A", 1, 0, 1)
        out = spatial_join([Point(1.0, 0.5)], [left, right])
        assert out == [(0, "A")]

    def test_matches_bruteforce_oracle(self):
        regions = grid_regions(10, 10, side=1.0)
        rng = np.random.default_rng(12)
        pts = [Point(float(x), float(y)) for x, y in rng.uniform(-1, 11, (10_000, 2))]
        fast = spatial_join(pts, regions)
        for i, p in enumerate(pts):
            hits = [(r.area_km2, r.id) for r in regions if point_in_polygon(p, r)]
            expected = min(hits)[1] if hits else None
            assert fast[i] == (i, expected)

    def test_translation_invariance(self):
        regions = grid_regions(4, 4)
        rng = np.random.default_rng(3)
        pts = [Point(float(x), float(y)) for x, y in rng.uniform(-1, 5, (200, 2))]
        base = spatial_join(pts, regions)
        dx, dy = 1e5, -2e4
        moved_regions = [
            square_region(r.id, r.bbox[0] + dx, r.bbox[1] + dy, r.bbox[2] - r.bbox[0], r.pop_density)
            for r in regions
        ]
        moved_pts = [Point(p.x + dx, p.y + dy) for p in pts]
        assert spatial_join(moved_pts, moved_regions) == base
        d0 = distance(pts[0], pts[1])
        assert distance(moved_pts[0], moved_pts[1]) == pytest.approx(d0, abs=1e-6)
