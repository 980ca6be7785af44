"""Concentric-pattern analysis of broadband diffusion determinants.

Pipeline: crowdsourced measurements + socio-economic tables -> per-region
proxy variables -> locally weighted regression against population density
-> residual autocorrelation test -> pattern verdict per determinant.
A synthetic concentric-city generator provides planted ground truth.
"""

__version__ = "0.1.0"

from .classify import ClassifierThresholds, PatternVerdict, classify_pattern
from .geo import Point, Region, parse_regions
from .gwr import GwrFit, KernelConfig, Observation, gwr_fit, optimize_bandwidth
from .autocorr import SpatialWeights, build_weights, morans_i, morans_p
from .synth import CityConfig, PlantSpec, generate_city, plant_determinant
from .config import RunConfig, load_config
from .pipeline import run_pipeline

__all__ = [
    "ClassifierThresholds",
    "PatternVerdict",
    "classify_pattern",
    "Point",
    "Region",
    "parse_regions",
    "GwrFit",
    "KernelConfig",
    "Observation",
    "gwr_fit",
    "optimize_bandwidth",
    "SpatialWeights",
    "build_weights",
    "morans_i",
    "morans_p",
    "CityConfig",
    "PlantSpec",
    "generate_city",
    "plant_determinant",
    "RunConfig",
    "load_config",
    "run_pipeline",
    "__version__",
]
