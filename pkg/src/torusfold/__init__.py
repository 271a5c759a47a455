"""Construction and numerical certification of a singular, C^2-robustly
transitive endomorphism of the n-torus that a C^1-small change makes
non-transitive."""

from .bumpkit import MapParams, SmoothProfile, solve_params, verify_params
from .errors import TorusFoldError
from .flatten import CollapseMap, FlattenedMap, build_collapse
from .torusmap import BaseMap, LinearMap, TorusPoint

__all__ = [
    "BaseMap", "CollapseMap", "FlattenedMap", "LinearMap", "MapParams", "SmoothProfile",
    "TorusFoldError", "TorusPoint", "build_collapse", "solve_params", "verify_params",
]
__version__ = "0.1.0"
