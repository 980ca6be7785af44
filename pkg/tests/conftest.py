import json
from pathlib import Path

import pytest

from concentra.geo import PLANAR, Region, region_from_polygons

DATA_DIR = Path(__file__).parent / "data"


def square_ring(x0: float, y0: float, side: float):
    return (
        (x0, y0),
        (x0 + side, y0),
        (x0 + side, y0 + side),
        (x0, y0 + side),
        (x0, y0),
    )


def square_region(
    region_id: str, x0: float, y0: float, side: float = 1.0, density: float = 100.0
) -> Region:
    return region_from_polygons(
        region_id, [(square_ring(x0, y0, side),)], PLANAR, pop_density=density
    )


def grid_regions(nx: int, ny: int, side: float = 1.0, density: float = 100.0):
    """nx * ny touching squares, row-major ids."""
    return [
        square_region(f"G{ix + nx * iy:04d}", ix * side, iy * side, side, density)
        for iy in range(ny)
        for ix in range(nx)
    ]


def feature(region_id: str, rings, density: float = 100.0, area=None):
    props = {"id": region_id, "pop_density": density}
    if area is not None:
        props["area_km2"] = area
    return {
        "type": "Feature",
        "properties": props,
        "geometry": {"type": "Polygon", "coordinates": [[list(pt) for pt in ring] for ring in rings]},
    }


def feature_collection(features) -> bytes:
    return json.dumps({"type": "FeatureCollection", "features": features}).encode()


@pytest.fixture
def unit_square_geojson():
    return feature_collection([feature("U1", [square_ring(0, 0, 1)], density=100.0)])
