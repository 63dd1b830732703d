"""discurate: deterministic 3D scene curation and QA generation."""

__version__ = "0.1.0"

from .geometry import (  # noqa: F401
    Obb7,
    Rect2,
    fit_obb7,
    min_area_rect,
    normalize_angle,
    obb_distance,
    obb_volume,
    sat_overlap,
    signed_angle,
)
